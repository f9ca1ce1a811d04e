//! Kronecker attention operators on rank-3 feature maps.
//!
//! The crate covers four layers of the stack:
//!
//! - [`tensor`]: dense matrices and `h x w x c` tensors, mode-3
//!   unfolding, slice averages, outer sums and Kronecker algebra.
//! - [`matvar`]: the matrix-variate normal model with outer-sum mean and
//!   diagonal Kronecker-sum covariance, its row/column-average marginals
//!   and the reconstruction that motivates the Kronecker operators.
//! - [`attention`] and [`grad`]: regular, pooled and Kronecker attention
//!   with hand-written backward passes and a finite-difference checker.
//! - [`nn`] and [`profiler`]: the inverted-residual modules and networks
//!   built from them, plus analytic MAdd/memory/parameter accounting and a
//!   wall-clock harness.

pub mod attention;
pub mod checks;
pub mod error;
pub mod grad;
pub mod matvar;
pub mod nn;
pub mod profiler;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor3};
