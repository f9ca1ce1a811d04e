//! Dense matrices and rank-3 tensors.
//!
//! Values are immutable once built; every operation returns a fresh value.

mod matrix;
mod ops;
mod tensor3;

pub use matrix::{Matrix, MatmulKernel};
pub use ops::{
    avg_pool_ceil, avg_pool_ceil_backward, fold_mode3, horizontal_mean, juxtapose_context,
    kronecker_product, kronecker_sum, lateral_mean, matmul, outer_sum, softmax_columns, trace,
    unfold_mode3, vec_index,
};
pub use tensor3::Tensor3;
