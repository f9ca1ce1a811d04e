//! Unfolding, slice averages, outer sums and Kronecker algebra.
//!
//! `vec(·)` stacks the columns of a matrix, so the mode-3 unfolding of an
//! `h x w x c` tensor places pixel `(i, j)` in column `j * h + i`.

use crate::error::{precondition, shape_err, Result};

use super::{Matrix, Tensor3};

/// Column index of pixel `(i, j)` in a mode-3 unfolding with `h` rows per
/// spatial column.
#[inline]
pub fn vec_index(i: usize, j: usize, h: usize) -> usize {
    j * h + i
}

/// Mode-3 unfolding: `c x hw` matrix whose row `k` is `vec(X_::k)ᵀ`.
pub fn unfold_mode3(t: &Tensor3) -> Matrix {
    let (h, w, c) = t.shape();
    let mut m = Matrix::zeros(c, h * w);
    let hw = h * w;
    let data = m.data_mut();
    for i in 0..h {
        for j in 0..w {
            let col = vec_index(i, j, h);
            for (k, &v) in t.fiber(i, j).iter().enumerate() {
                data[k * hw + col] = v;
            }
        }
    }
    m
}

/// Inverse of [`unfold_mode3`]: columns of `m` become mode-3 fibers.
pub fn fold_mode3(m: &Matrix, h: usize, w: usize) -> Result<Tensor3> {
    if h == 0 || w == 0 || m.cols() != h * w {
        return shape_err(
            "fold_mode3",
            format!("{} columns cannot fold to {h}x{w}", m.cols()),
        );
    }
    let c = m.rows();
    let mut t = Tensor3::zeros(h, w, c);
    for k in 0..c {
        let row = m.row(k);
        for j in 0..w {
            for i in 0..h {
                t.set(i, j, k, row[vec_index(i, j, h)]);
            }
        }
    }
    Ok(t)
}

/// `H = (1/h) Σ_i X_i::`, a `w x c` matrix (average over the height axis).
pub fn horizontal_mean(t: &Tensor3) -> Matrix {
    let (h, w, c) = t.shape();
    let mut m = Matrix::zeros(w, c);
    for i in 0..h {
        for j in 0..w {
            for (k, &v) in t.fiber(i, j).iter().enumerate() {
                m.data_mut()[j * c + k] += v;
            }
        }
    }
    m.scale(1.0 / h as f64)
}

/// `L = (1/w) Σ_j X_:j:`, an `h x c` matrix (average over the width axis).
pub fn lateral_mean(t: &Tensor3) -> Matrix {
    let (h, w, c) = t.shape();
    let mut m = Matrix::zeros(h, c);
    for i in 0..h {
        for j in 0..w {
            for (k, &v) in t.fiber(i, j).iter().enumerate() {
                m.data_mut()[i * c + k] += v;
            }
        }
    }
    m.scale(1.0 / w as f64)
}

/// Context matrix `C = [Hᵀ, Lᵀ]` of shape `c x (w + h)`: the first `w`
/// columns are width positions, the last `h` columns are height positions.
pub fn juxtapose_context(t: &Tensor3) -> Matrix {
    let hm = horizontal_mean(t);
    let lm = lateral_mean(t);
    let (h, w, c) = t.shape();
    Matrix::from_fn(c, w + h, |k, col| {
        if col < w {
            hm.get(col, k)
        } else {
            lm.get(col - w, k)
        }
    })
}

/// `u 1ᵀ + 1 vᵀ`: entry `(i, j)` is `u[i] + v[j]`.
pub fn outer_sum(u: &[f64], v: &[f64]) -> Result<Matrix> {
    if u.is_empty() || v.is_empty() {
        return shape_err("outer_sum", "empty operand");
    }
    Ok(Matrix::from_fn(u.len(), v.len(), |i, j| u[i] + v[j]))
}

pub fn kronecker_product(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    })
}

/// `Ω ⊕ Ψ = Ω ⊗ I_n + I_m ⊗ Ψ` for square `Ω (m x m)` and `Ψ (n x n)`.
pub fn kronecker_sum(omega: &Matrix, psi: &Matrix) -> Result<Matrix> {
    let (m, mc) = omega.shape();
    let (n, nc) = psi.shape();
    if m != mc || n != nc {
        return shape_err(
            "kronecker_sum",
            format!("operands must be square, got {m}x{mc} and {n}x{nc}"),
        );
    }
    let left = kronecker_product(omega, &Matrix::identity(n));
    let right = kronecker_product(&Matrix::identity(m), psi);
    left.add(&right)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn softmax_columns(m: &Matrix) -> Matrix {
    m.softmax_columns()
}

pub fn trace(m: &Matrix) -> Result<f64> {
    m.trace()
}

/// Average pooling with a square window of size `stride` and the same
/// stride. Partial windows at the right/bottom edges are averaged over
/// the entries they actually cover, so the output is
/// `ceil(h/stride) x ceil(w/stride) x c`.
pub fn avg_pool_ceil(t: &Tensor3, stride: usize) -> Result<Tensor3> {
    if stride == 0 {
        return precondition("avg_pool_ceil", "stride must be positive");
    }
    let (h, w, c) = t.shape();
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Tensor3::zeros(ho, wo, c);
    for oi in 0..ho {
        for oj in 0..wo {
            let rows = oi * stride..((oi + 1) * stride).min(h);
            let cols = oj * stride..((oj + 1) * stride).min(w);
            let count = (rows.len() * cols.len()) as f64;
            for i in rows.clone() {
                for j in cols.clone() {
                    for (k, &v) in t.fiber(i, j).iter().enumerate() {
                        out.add_at(oi, oj, k, v / count);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avg_pool_ceil`]: spreads each pooled gradient evenly over
/// its window in an `h x w` input.
pub fn avg_pool_ceil_backward(
    upstream: &Tensor3,
    h: usize,
    w: usize,
    stride: usize,
) -> Result<Tensor3> {
    if stride == 0 {
        return precondition("avg_pool_ceil_backward", "stride must be positive");
    }
    let (ho, wo, c) = upstream.shape();
    if ho != h.div_ceil(stride) || wo != w.div_ceil(stride) {
        return shape_err(
            "avg_pool_ceil_backward",
            format!("pooled {ho}x{wo} does not match input {h}x{w} at stride {stride}"),
        );
    }
    let mut out = Tensor3::zeros(h, w, c);
    for oi in 0..ho {
        for oj in 0..wo {
            let rows = oi * stride..((oi + 1) * stride).min(h);
            let cols = oj * stride..((oj + 1) * stride).min(w);
            let count = (rows.len() * cols.len()) as f64;
            for i in rows.clone() {
                for j in cols.clone() {
                    for k in 0..c {
                        out.add_at(i, j, k, upstream.get(oi, oj, k) / count);
                    }
                }
            }
        }
    }
    Ok(out)
}
