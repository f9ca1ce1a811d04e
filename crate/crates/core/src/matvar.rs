//! Matrix-variate normal model with outer-sum mean and diagonal
//! Kronecker-sum covariance.
//!
//! A random `h x w` matrix `X ~ MN(μ ⋄+ υ, Ω ⊕ Ψ)` with diagonal `Ω`, `Ψ`
//! has independent entries: under the row-major ordering `vec(Xᵀ)` the
//! diagonal of `Ω ⊕ Ψ` at position `i * w + j` is `Ω_ii + Ψ_jj`.
//!
//! Averaging rows gives `N_w(μ̄ + υ, (Ω̄ + Ψ)/h)` and averaging columns gives
//! `N_h(ῡ + μ, (Ψ̄ + Ω)/w)`. Summing `h` independent row-average draws
//! (stacked as rows) with `w` independent column-average draws (stacked
//! as columns) yields `MN((μ ⋄+ υ) + (μ̄ + ῡ), (Ψ̄ + Ω)/w ⊕ (Ω̄ + Ψ)/h)`,
//! whose trace is `2/h` times the original when `h = w`.

use rand::Rng;

use crate::error::{precondition, shape_err, Result};
use crate::rng::{seeded, standard_normal};
use crate::tensor::{kronecker_sum, outer_sum, Matrix};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `MN_{h x w}(μ ⋄+ υ, diag(Ω) ⊕ diag(Ψ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalKS {
    mu: Vec<f64>,
    upsilon: Vec<f64>,
    omega_diag: Vec<f64>,
    psi_diag: Vec<f64>,
}

impl MatrixNormalKS {
    pub fn new(
        mu: Vec<f64>,
        upsilon: Vec<f64>,
        omega_diag: Vec<f64>,
        psi_diag: Vec<f64>,
    ) -> Result<Self> {
        if mu.is_empty() || upsilon.is_empty() {
            return shape_err("MatrixNormalKS::new", "mean components must be non-empty");
        }
        if omega_diag.len() != mu.len() || psi_diag.len() != upsilon.len() {
            return shape_err(
                "MatrixNormalKS::new",
                format!(
                    "mu/omega lengths {}/{}, upsilon/psi lengths {}/{}",
                    mu.len(),
                    omega_diag.len(),
                    upsilon.len(),
                    psi_diag.len()
                ),
            );
        }
        if omega_diag.iter().chain(&psi_diag).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return precondition(
                "MatrixNormalKS::new",
                "variance factors must be finite and strictly positive",
            );
        }
        Ok(Self {
            mu,
            upsilon,
            omega_diag,
            psi_diag,
        })
    }

    /// Accepts dense covariance factors only if they are diagonal.
    pub fn from_dense_factors(
        mu: Vec<f64>,
        upsilon: Vec<f64>,
        omega: &Matrix,
        psi: &Matrix,
    ) -> Result<Self> {
        let diag_of = |m: &Matrix, name: &str| -> Result<Vec<f64>> {
            let (r, c) = m.shape();
            if r != c {
                return shape_err("MatrixNormalKS::from_dense_factors", format!("{name} is {r}x{c}"));
            }
            for i in 0..r {
                for j in 0..c {
                    if i != j && m.get(i, j) != 0.0 {
                        return precondition(
                            "MatrixNormalKS::from_dense_factors",
                            format!("{name} has off-diagonal entry at ({i}, {j})"),
                        );
                    }
                }
            }
            Ok((0..r).map(|i| m.get(i, i)).collect())
        };
        let o = diag_of(omega, "omega")?;
        let p = diag_of(psi, "psi")?;
        Self::new(mu, upsilon, o, p)
    }

    pub fn h(&self) -> usize {
        self.mu.len()
    }

    pub fn w(&self) -> usize {
        self.upsilon.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn upsilon(&self) -> &[f64] {
        &self.upsilon
    }

    pub fn omega_diag(&self) -> &[f64] {
        &self.omega_diag
    }

    pub fn psi_diag(&self) -> &[f64] {
        &self.psi_diag
    }

    /// `M = μ ⋄+ υ`.
    pub fn mean_matrix(&self) -> Matrix {
        outer_sum(&self.mu, &self.upsilon).expect("non-empty by construction")
    }

    /// Materialized `Ω ⊕ Ψ` (size `hw x hw`).
    pub fn covariance(&self) -> Matrix {
        kronecker_sum(
            &Matrix::from_diag(&self.omega_diag),
            &Matrix::from_diag(&self.psi_diag),
        )
        .expect("diagonal factors are square")
    }

    /// Variance of entry `(i, j)`: the diagonal of `Ω ⊕ Ψ` at `i * w + j`.
    pub fn entry_variance(&self, i: usize, j: usize) -> f64 {
        self.omega_diag[i] + self.psi_diag[j]
    }

    pub fn sample(&self, seed: u64) -> Matrix {
        self.sample_with(&mut seeded(seed))
    }

    pub fn sample_with(&self, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(self.h(), self.w(), |i, j| {
            self.mu[i] + self.upsilon[j] + self.entry_variance(i, j).sqrt() * standard_normal(rng)
        })
    }

    /// Distribution of the average of the `h` rows, a length-`w` vector.
    pub fn row_average_marginal(&self) -> MarginalSpec {
        let mu_bar = mean(&self.mu);
        let omega_bar = mean(&self.omega_diag);
        let h = self.h() as f64;
        MarginalSpec {
            mean: self.upsilon.iter().map(|u| mu_bar + u).collect(),
            cov_diag: self.psi_diag.iter().map(|p| (omega_bar + p) / h).collect(),
            axis: Axis::Row,
            mean_bar: mu_bar,
            var_bar: omega_bar,
        }
    }

    /// Distribution of the average of the `w` columns, a length-`h` vector.
    pub fn col_average_marginal(&self) -> MarginalSpec {
        let upsilon_bar = mean(&self.upsilon);
        let psi_bar = mean(&self.psi_diag);
        let w = self.w() as f64;
        MarginalSpec {
            mean: self.mu.iter().map(|m| upsilon_bar + m).collect(),
            cov_diag: self.omega_diag.iter().map(|o| (psi_bar + o) / w).collect(),
            axis: Axis::Column,
            mean_bar: upsilon_bar,
            var_bar: psi_bar,
        }
    }

    /// Closed-form mean and per-entry variance of [`reconstruct`] applied
    /// to independent marginal draws.
    pub fn reconstruction_moments(&self) -> (Matrix, Matrix) {
        let shift = mean(&self.mu) + mean(&self.upsilon);
        let (row_factor, col_factor) = self.reconstruction_factors();
        let m = self.mean_matrix();
        let mean = Matrix::from_fn(self.h(), self.w(), |i, j| m.get(i, j) + shift);
        let var = Matrix::from_fn(self.h(), self.w(), |i, j| row_factor[i] + col_factor[j]);
        (mean, var)
    }

    /// Diagonals of `(Ψ̄ + Ω)/w` (length `h`) and `(Ω̄ + Ψ)/h` (length `w`).
    pub fn reconstruction_factors(&self) -> (Vec<f64>, Vec<f64>) {
        let col = self.col_average_marginal();
        let row = self.row_average_marginal();
        (col.cov_diag, row.cov_diag)
    }

    /// Draws `h` row-average vectors and `w` column-average vectors and
    /// combines them with [`reconstruct`].
    pub fn sample_reconstruction(&self, rng: &mut impl Rng) -> Matrix {
        let row = self.row_average_marginal();
        let col = self.col_average_marginal();
        let rows: Vec<Vec<f64>> = (0..self.h()).map(|_| row.sample_with(rng)).collect();
        let cols: Vec<Vec<f64>> = (0..self.w()).map(|_| col.sample_with(rng)).collect();
        reconstruct(&rows, &cols).expect("marginal lengths match by construction")
    }

    /// Shifts `μ` and `υ` to zero mean each, so `μ̄ + ῡ = 0`.
    pub fn normalize_mean(&self) -> MatrixNormalKS {
        let mb = mean(&self.mu);
        let ub = mean(&self.upsilon);
        MatrixNormalKS {
            mu: self.mu.iter().map(|m| m - mb).collect(),
            upsilon: self.upsilon.iter().map(|u| u - ub).collect(),
            omega_diag: self.omega_diag.clone(),
            psi_diag: self.psi_diag.clone(),
        }
    }

    /// Both sides of `tr((Ψ̄+Ω)/w ⊕ (Ω̄+Ψ)/h) = (2/h) tr(Ω ⊕ Ψ)`, each
    /// evaluated on the materialized Kronecker sums. Requires `h = w`.
    pub fn trace_identity_check(&self) -> Result<TraceCheck> {
        if self.h() != self.w() {
            return precondition(
                "trace_identity_check",
                format!("requires h = w, got {}x{}", self.h(), self.w()),
            );
        }
        let (a, b) = self.reconstruction_factors();
        let lhs = kronecker_sum(&Matrix::from_diag(&a), &Matrix::from_diag(&b))?.trace()?;
        let rhs = 2.0 / self.h() as f64 * self.covariance().trace()?;
        Ok(TraceCheck { lhs, rhs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

/// Diagonal-covariance normal describing a row or column average.
///
/// `mean_bar`/`var_bar` hold the scalar averages of the averaged-out axis:
/// `(μ̄, Ω̄)` for [`Axis::Row`], `(ῡ, Ψ̄)` for [`Axis::Column`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSpec {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub axis: Axis,
    pub mean_bar: f64,
    pub var_bar: f64,
}

impl MarginalSpec {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_with(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.cov_diag)
            .map(|(m, v)| m + v.sqrt() * standard_normal(rng))
            .collect()
    }
}

/// `[r_1, …, r_h]ᵀ + [c_1, …, c_w]`: entry `(i, j)` is `r_i[j] + c_j[i]`.
pub fn reconstruct(rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Result<Matrix> {
    let (h, w) = (rows.len(), cols.len());
    if h == 0 || w == 0 {
        return shape_err("reconstruct", "need at least one row and one column vector");
    }
    if rows.iter().any(|r| r.len() != w) || cols.iter().any(|c| c.len() != h) {
        return shape_err(
            "reconstruct",
            format!("expected {h} rows of length {w} and {w} columns of length {h}"),
        );
    }
    Ok(Matrix::from_fn(h, w, |i, j| rows[i][j] + cols[j][i]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl TraceCheck {
    pub fn abs_diff(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Streaming per-coordinate mean and variance (Welford).
#[derive(Debug, Clone)]
pub struct EntryMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl EntryMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }
}
