//! Hand-written backward passes and a central-difference gradient checker.
//!
//! Every backward function returns the gradient of `⟨upstream, f(x)⟩`
//! with respect to the inputs of `f`.

use crate::attention::{
    attn_traced, forward_traced, AttentionKind, AttnConfig, AttnTrace, CoeffNorm,
};
use crate::error::{precondition, shape_err, Result};
use crate::rng::{seeded, uniform_matrix};
use crate::tensor::{
    avg_pool_ceil, avg_pool_ceil_backward, fold_mode3, juxtapose_context, unfold_mode3, Matrix,
    Tensor3,
};

/// `(dA, dB)` for `C = A B`.
pub fn backward_matmul(a: &Matrix, b: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    if upstream.shape() != (a.rows(), b.cols()) || a.cols() != b.rows() {
        return shape_err("backward_matmul", "upstream does not match forward shapes");
    }
    Ok((upstream.matmul_t(b)?, a.t_matmul(upstream)?))
}

/// Gradient through `S = softmax_columns(E)` given `S`: per column,
/// `dE = s ⊙ (g − ⟨s, g⟩)`, i.e. `(diag(s) − s sᵀ) g`.
pub fn backward_softmax_columns(probs: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if probs.shape() != upstream.shape() {
        return shape_err("backward_softmax_columns", "upstream does not match forward shape");
    }
    let (n, m) = probs.shape();
    let mut dots = vec![0.0; m];
    for a in 0..n {
        for ((d, &s), &g) in dots.iter_mut().zip(probs.row(a)).zip(upstream.row(a)) {
            *d += s * g;
        }
    }
    Ok(Matrix::from_fn(n, m, |a, j| {
        probs.get(a, j) * (upstream.get(a, j) - dots[j])
    }))
}

/// Gradients of attention with respect to its inputs and any transforms.
#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dwq: Option<Matrix>,
    pub dwk: Option<Matrix>,
    pub dwv: Option<Matrix>,
}

fn untransform(
    w: &Option<Matrix>,
    raw: &Matrix,
    d_transformed: Matrix,
) -> Result<(Matrix, Option<Matrix>)> {
    match w {
        Some(w) => Ok((w.t_matmul(&d_transformed)?, Some(d_transformed.matmul_t(raw)?))),
        None => Ok((d_transformed, None)),
    }
}

/// Backward pass reusing a forward trace. `q`, `k`, `v` are the raw
/// (untransformed) inputs that produced `trace`.
pub fn backward_attn_traced(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    trace: &AttnTrace,
    upstream: &Matrix,
) -> Result<AttnGrads> {
    if upstream.shape() != trace.output.shape() {
        return shape_err(
            "backward_attn",
            format!(
                "upstream {:?} vs output {:?}",
                upstream.shape(),
                trace.output.shape()
            ),
        );
    }
    let dv_t = upstream.matmul_t(&trace.probs)?;
    let dprobs = trace.v.t_matmul(upstream)?;
    let mut dscores = backward_softmax_columns(&trace.probs, &dprobs)?;
    if let CoeffNorm::Stats(stats) = &cfg.coeff_norm {
        let (scale, _) = stats.affine();
        let m = dscores.cols();
        for (a, row) in dscores.data_mut().chunks_mut(m).enumerate() {
            for g in row {
                *g *= scale[a];
            }
        }
    }
    let dq_t = trace.k.matmul(&dscores)?;
    let dk_t = trace.q.matmul_t(&dscores)?;
    let (dq, dwq) = untransform(&cfg.wq, q, dq_t)?;
    let (dk, dwk) = untransform(&cfg.wk, k, dk_t)?;
    let (dv, dwv) = untransform(&cfg.wv, v, dv_t)?;
    Ok(AttnGrads {
        dq,
        dk,
        dv,
        dwq,
        dwk,
        dwv,
    })
}

pub fn backward_attn(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    upstream: &Matrix,
) -> Result<AttnGrads> {
    let trace = attn_traced(q, k, v, cfg)?;
    backward_attn_traced(q, k, v, cfg, &trace, upstream)
}

/// Adjoint of [`juxtapose_context`]: column `j < w` of `dC` spreads
/// `1/h` to every row of width position `j`; column `w + i` spreads `1/w`
/// to every column of height position `i`.
pub fn juxtapose_context_backward(dctx: &Matrix, h: usize, w: usize) -> Result<Tensor3> {
    if dctx.cols() != h + w {
        return shape_err(
            "juxtapose_context_backward",
            format!("{} columns for {h}x{w}", dctx.cols()),
        );
    }
    let c = dctx.rows();
    let (hf, wf) = (h as f64, w as f64);
    Ok(Tensor3::from_fn(h, w, c, |i, j, k| {
        dctx.get(k, j) / hf + dctx.get(k, w + i) / wf
    }))
}

/// Adjoint of [`crate::attention::expand_outer_sum`].
pub fn expand_outer_sum_backward(upstream: &Tensor3) -> Matrix {
    let (h, w, c) = upstream.shape();
    let mut d = Matrix::zeros(c, w + h);
    for i in 0..h {
        for j in 0..w {
            for (k, &g) in upstream.fiber(i, j).iter().enumerate() {
                let cols = w + h;
                d.data_mut()[k * cols + j] += g;
                d.data_mut()[k * cols + w + i] += g;
            }
        }
    }
    d
}

/// Input and transform gradients of a tensor attention operator.
#[derive(Debug, Clone)]
pub struct TensorAttnGrads {
    pub input: Tensor3,
    pub dwq: Option<Matrix>,
    pub dwk: Option<Matrix>,
    pub dwv: Option<Matrix>,
}

pub fn backward_tensor_op(
    kind: AttentionKind,
    t: &Tensor3,
    cfg: &AttnConfig,
    upstream: &Tensor3,
) -> Result<TensorAttnGrads> {
    let trace = forward_traced(kind, t, cfg)?;
    backward_tensor_traced(kind, t, cfg, &trace.attn, upstream)
}

/// Backward pass of a tensor operator given the trace of its inner
/// attention call.
pub fn backward_tensor_traced(
    kind: AttentionKind,
    t: &Tensor3,
    cfg: &AttnConfig,
    trace: &AttnTrace,
    upstream: &Tensor3,
) -> Result<TensorAttnGrads> {
    let (h, w, _) = t.shape();
    let out_c = trace.output.rows();
    if upstream.shape() != (h, w, out_c) {
        return shape_err(
            "backward_tensor_op",
            format!("upstream {:?} vs output {:?}", upstream.shape(), (h, w, out_c)),
        );
    }
    let (input, g) = match kind {
        AttentionKind::Regular => {
            let x = unfold_mode3(t);
            let g = backward_attn_traced(&x, &x, &x, cfg, trace, &unfold_mode3(upstream))?;
            let dx = g.dq.add(&g.dk)?.add(&g.dv)?;
            (fold_mode3(&dx, h, w)?, g)
        }
        AttentionKind::Pooled => {
            let x = unfold_mode3(t);
            let pooled = avg_pool_ceil(t, 2)?;
            let kv = unfold_mode3(&pooled);
            let g = backward_attn_traced(&x, &kv, &kv, cfg, trace, &unfold_mode3(upstream))?;
            let dkv = fold_mode3(&g.dk.add(&g.dv)?, pooled.h(), pooled.w())?;
            let mut dx = fold_mode3(&g.dq, h, w)?;
            dx.add_assign(&avg_pool_ceil_backward(&dkv, h, w, 2)?)?;
            (dx, g)
        }
        AttentionKind::KaoKv => {
            let x = unfold_mode3(t);
            let ctx = juxtapose_context(t);
            let g = backward_attn_traced(&x, &ctx, &ctx, cfg, trace, &unfold_mode3(upstream))?;
            let mut dx = fold_mode3(&g.dq, h, w)?;
            dx.add_assign(&juxtapose_context_backward(&g.dk.add(&g.dv)?, h, w)?)?;
            (dx, g)
        }
        AttentionKind::KaoQkv => {
            let ctx = juxtapose_context(t);
            let dout = expand_outer_sum_backward(upstream);
            let g = backward_attn_traced(&ctx, &ctx, &ctx, cfg, trace, &dout)?;
            let dctx = g.dq.add(&g.dk)?.add(&g.dv)?;
            (juxtapose_context_backward(&dctx, h, w)?, g)
        }
    };
    Ok(TensorAttnGrads {
        input,
        dwq: g.dwq,
        dwk: g.dwk,
        dwv: g.dwv,
    })
}

pub fn backward_nonlocal_2d(t: &Tensor3, cfg: &AttnConfig, upstream: &Tensor3) -> Result<Tensor3> {
    Ok(backward_tensor_op(AttentionKind::Regular, t, cfg, upstream)?.input)
}

pub fn backward_attn_pooled_2d(
    t: &Tensor3,
    cfg: &AttnConfig,
    upstream: &Tensor3,
) -> Result<Tensor3> {
    Ok(backward_tensor_op(AttentionKind::Pooled, t, cfg, upstream)?.input)
}

pub fn backward_kao_kv(t: &Tensor3, cfg: &AttnConfig, upstream: &Tensor3) -> Result<Tensor3> {
    Ok(backward_tensor_op(AttentionKind::KaoKv, t, cfg, upstream)?.input)
}

pub fn backward_kao_qkv(t: &Tensor3, cfg: &AttnConfig, upstream: &Tensor3) -> Result<Tensor3> {
    Ok(backward_tensor_op(AttentionKind::KaoQkv, t, cfg, upstream)?.input)
}

/// A vector-valued function with a hand-written vector-Jacobian product.
pub trait Differentiable {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of `⟨upstream, forward(x)⟩` with respect to `x`.
    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Adapter turning two closures into a [`Differentiable`].
pub struct FnOp<F, B> {
    pub forward: F,
    pub backward: B,
}

impl<F, B> Differentiable for FnOp<F, B>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    B: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.forward)(x)
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        (self.backward)(x, upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat input coordinate with the largest relative error.
    pub worst_index: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Relative error `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks `f.backward` against central differences of `⟨upstream, f(x)⟩`
/// at every input coordinate.
pub fn gradcheck_with_upstream(
    f: &dyn Differentiable,
    input: &[f64],
    upstream: &[f64],
    epsilon: f64,
    threshold: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return precondition("gradcheck", format!("epsilon {epsilon} outside [1e-7, 1e-3]"));
    }
    let out = f.forward(input)?;
    if out.len() != upstream.len() {
        return shape_err(
            "gradcheck",
            format!("output has {} entries, upstream {}", out.len(), upstream.len()),
        );
    }
    let analytic = f.backward(input, upstream)?;
    if analytic.len() != input.len() {
        return shape_err(
            "gradcheck",
            format!("gradient has {} entries, input {}", analytic.len(), input.len()),
        );
    }
    let loss = |x: &[f64]| -> Result<f64> {
        Ok(f.forward(x)?.iter().zip(upstream).map(|(y, u)| y * u).sum())
    };
    let mut x = input.to_vec();
    let mut worst = (0.0, 0usize);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = loss(&x)?;
        x[i] = orig - epsilon;
        let minus = loss(&x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        epsilon,
        threshold,
        passed: worst.0 < threshold,
    })
}

/// [`gradcheck_with_upstream`] with a seeded uniform upstream in `[-1, 1)`.
pub fn gradcheck(
    f: &dyn Differentiable,
    input: &[f64],
    epsilon: f64,
    threshold: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let n = f.forward(input)?.len();
    let upstream = uniform_matrix(&mut seeded(seed), 1, n.max(1), -1.0, 1.0).into_data();
    gradcheck_with_upstream(f, input, &upstream[..n], epsilon, threshold)
}

/// `softmax_columns` on an `rows x cols` matrix.
pub struct SoftmaxOp {
    pub rows: usize,
    pub cols: usize,
}

impl Differentiable for SoftmaxOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(Matrix::new(self.rows, self.cols, x.to_vec())?
            .softmax_columns()
            .into_data())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let s = Matrix::new(self.rows, self.cols, x.to_vec())?.softmax_columns();
        let g = Matrix::new(self.rows, self.cols, upstream.to_vec())?;
        Ok(backward_softmax_columns(&s, &g)?.into_data())
    }
}

/// `A B` with input `[vec(A); vec(B)]` (row-major blocks).
pub struct MatmulOp {
    pub a_shape: (usize, usize),
    pub b_shape: (usize, usize),
}

impl MatmulOp {
    fn split(&self, x: &[f64]) -> Result<(Matrix, Matrix)> {
        let na = self.a_shape.0 * self.a_shape.1;
        if x.len() != na + self.b_shape.0 * self.b_shape.1 {
            return shape_err("MatmulOp", "input length");
        }
        Ok((
            Matrix::new(self.a_shape.0, self.a_shape.1, x[..na].to_vec())?,
            Matrix::new(self.b_shape.0, self.b_shape.1, x[na..].to_vec())?,
        ))
    }
}

impl Differentiable for MatmulOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = self.split(x)?;
        Ok(a.matmul(&b)?.into_data())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = self.split(x)?;
        let g = Matrix::new(a.rows(), b.cols(), upstream.to_vec())?;
        let (da, db) = backward_matmul(&a, &b, &g)?;
        let mut out = da.into_data();
        out.extend(db.into_data());
        Ok(out)
    }
}

/// `attn(Q, K, V)` with input `[vec(Q); vec(K); vec(V)]`.
pub struct AttnOp {
    pub q_shape: (usize, usize),
    pub k_shape: (usize, usize),
    pub v_shape: (usize, usize),
    pub cfg: AttnConfig,
}

impl AttnOp {
    fn split(&self, x: &[f64]) -> Result<(Matrix, Matrix, Matrix)> {
        let nq = self.q_shape.0 * self.q_shape.1;
        let nk = self.k_shape.0 * self.k_shape.1;
        let nv = self.v_shape.0 * self.v_shape.1;
        if x.len() != nq + nk + nv {
            return shape_err("AttnOp", "input length");
        }
        Ok((
            Matrix::new(self.q_shape.0, self.q_shape.1, x[..nq].to_vec())?,
            Matrix::new(self.k_shape.0, self.k_shape.1, x[nq..nq + nk].to_vec())?,
            Matrix::new(self.v_shape.0, self.v_shape.1, x[nq + nk..].to_vec())?,
        ))
    }
}

impl Differentiable for AttnOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (q, k, v) = self.split(x)?;
        Ok(attn_traced(&q, &k, &v, &self.cfg)?.output.into_data())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (q, k, v) = self.split(x)?;
        let trace = attn_traced(&q, &k, &v, &self.cfg)?;
        let (p, m) = trace.output.shape();
        let g = backward_attn_traced(&q, &k, &v, &self.cfg, &trace, &Matrix::new(p, m, upstream.to_vec())?)?;
        let mut out = g.dq.into_data();
        out.extend(g.dk.into_data());
        out.extend(g.dv.into_data());
        Ok(out)
    }
}

/// A tensor attention operator differentiated with respect to its input.
pub struct TensorAttnOp {
    pub kind: AttentionKind,
    pub shape: (usize, usize, usize),
    pub cfg: AttnConfig,
}

impl Differentiable for TensorAttnOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (h, w, c) = self.shape;
        let t = Tensor3::new(h, w, c, x.to_vec())?;
        Ok(forward_traced(self.kind, &t, &self.cfg)?.output.into_data())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (h, w, c) = self.shape;
        let t = Tensor3::new(h, w, c, x.to_vec())?;
        let tr = forward_traced(self.kind, &t, &self.cfg)?;
        let oc = tr.output.c();
        let g = Tensor3::new(h, w, oc, upstream.to_vec())?;
        Ok(backward_tensor_traced(self.kind, &t, &self.cfg, &tr.attn, &g)?
            .input
            .into_data())
    }
}

/// A tensor attention operator differentiated with respect to the value
/// transform `W^V` (input is `vec(W^V)`, row-major).
pub struct ValueTransformOp {
    pub kind: AttentionKind,
    pub input: Tensor3,
    pub wv_shape: (usize, usize),
}

impl ValueTransformOp {
    fn cfg(&self, x: &[f64]) -> Result<AttnConfig> {
        Ok(AttnConfig::with_value_transform(Matrix::new(
            self.wv_shape.0,
            self.wv_shape.1,
            x.to_vec(),
        )?))
    }
}

impl Differentiable for ValueTransformOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(forward_traced(self.kind, &self.input, &self.cfg(x)?)?
            .output
            .into_data())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.cfg(x)?;
        let tr = forward_traced(self.kind, &self.input, &cfg)?;
        let (h, w, c) = tr.output.shape();
        let g = Tensor3::new(h, w, c, upstream.to_vec())?;
        let grads = backward_tensor_traced(self.kind, &self.input, &cfg, &tr.attn, &g)?;
        Ok(grads.dwv.expect("value transform present").into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_matrix, uniform_tensor};

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded(3);
        let q = uniform_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let k = uniform_matrix(&mut rng, 3, 5, -1.0, 1.0);
        let v = uniform_matrix(&mut rng, 2, 5, -1.0, 1.0);
        let g = backward_attn(&q, &k, &v, &AttnConfig::plain(), &Matrix::zeros(2, 4)).unwrap();
        for m in [&g.dq, &g.dk, &g.dv] {
            assert!(m.data().iter().all(|&x| x == 0.0));
        }
        let t = uniform_tensor(&mut rng, 3, 3, 2, -1.0, 1.0);
        let z = Tensor3::zeros(3, 3, 2);
        for kind in AttentionKind::ALL {
            let g = backward_tensor_op(kind, &t, &AttnConfig::plain(), &z).unwrap();
            assert!(g.input.data().iter().all(|&x| x == 0.0), "{kind}");
        }
    }

    #[test]
    fn single_key_kills_similarity_gradients() {
        let mut rng = seeded(4);
        let q = uniform_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let k = uniform_matrix(&mut rng, 3, 1, -1.0, 1.0);
        let v = uniform_matrix(&mut rng, 2, 1, -1.0, 1.0);
        let up = uniform_matrix(&mut rng, 2, 4, -1.0, 1.0);
        let g = backward_attn(&q, &k, &v, &AttnConfig::plain(), &up).unwrap();
        assert!(g.dq.data().iter().all(|x| x.abs() < 1e-15));
        assert!(g.dk.data().iter().all(|x| x.abs() < 1e-15));
        for p in 0..2 {
            let want: f64 = up.row(p).iter().sum();
            assert!((g.dv.get(p, 0) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_function_is_exact() {
        let op = FnOp {
            forward: |x: &[f64]| Ok(vec![3.0 * x[0] - 2.0 * x[1], x[1] + 0.5 * x[2]]),
            backward: |_: &[f64], u: &[f64]| Ok(vec![3.0 * u[0], -2.0 * u[0] + u[1], 0.5 * u[1]]),
        };
        let r = gradcheck(&op, &[0.3, -1.2, 4.0], 1e-5, 1e-10, 1).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let op = FnOp {
            forward: |x: &[f64]| Ok(vec![x[0] * x[0]]),
            backward: |x: &[f64], u: &[f64]| Ok(vec![4.0 * x[0] * u[0]]),
        };
        let r = gradcheck_with_upstream(&op, &[1.5], &[1.0], 1e-5, 1e-6).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, 0);
    }

    #[test]
    fn epsilon_range_enforced() {
        let op = SoftmaxOp { rows: 2, cols: 1 };
        assert!(gradcheck(&op, &[0.0, 1.0], 1e-2, 1e-6, 0).is_err());
    }

    #[test]
    fn attn_random_2x3_passes() {
        let mut rng = seeded(9);
        let q = uniform_matrix(&mut rng, 2, 3, -1.0, 1.0);
        let k = uniform_matrix(&mut rng, 2, 3, -1.0, 1.0);
        let v = uniform_matrix(&mut rng, 2, 3, -1.0, 1.0);
        let op = AttnOp {
            q_shape: (2, 3),
            k_shape: (2, 3),
            v_shape: (2, 3),
            cfg: AttnConfig::plain(),
        };
        let x: Vec<f64> = [q.data(), k.data(), v.data()].concat();
        let r = gradcheck(&op, &x, 1e-5, 1e-6, 2).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn attn_with_all_transforms_and_coeff_norm() {
        use crate::attention::CoeffNormStats;
        let mut rng = seeded(10);
        let q = uniform_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let k = uniform_matrix(&mut rng, 3, 5, -1.0, 1.0);
        let v = uniform_matrix(&mut rng, 2, 5, -1.0, 1.0);
        let mut stats = CoeffNormStats::identity(5);
        stats.mean = vec![0.1, -0.2, 0.0, 0.3, 0.05];
        stats.var = vec![0.5, 1.5, 2.0, 0.7, 1.0];
        stats.gamma = vec![1.2, 0.8, -0.5, 1.0, 2.0];
        stats.eps = 1e-5;
        let cfg = AttnConfig {
            wq: Some(uniform_matrix(&mut rng, 2, 3, -1.0, 1.0)),
            wk: Some(uniform_matrix(&mut rng, 2, 3, -1.0, 1.0)),
            wv: Some(uniform_matrix(&mut rng, 3, 2, -1.0, 1.0)),
            coeff_norm: CoeffNorm::Stats(stats),
            ..AttnConfig::default()
        };
        let op = AttnOp {
            q_shape: (3, 4),
            k_shape: (3, 5),
            v_shape: (2, 5),
            cfg: cfg.clone(),
        };
        let x: Vec<f64> = [q.data(), k.data(), v.data()].concat();
        let r = gradcheck(&op, &x, 1e-5, 1e-6, 5).unwrap();
        assert!(r.passed, "{r:?}");

        // transform gradients: perturb W^Q through a closure
        let up = uniform_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let g = backward_attn(&q, &k, &v, &cfg, &up).unwrap();
        let wq_op = FnOp {
            forward: |x: &[f64]| {
                let mut c = cfg.clone();
                c.wq = Some(Matrix::new(2, 3, x.to_vec())?);
                Ok(attn_traced(&q, &k, &v, &c)?.output.into_data())
            },
            backward: |_: &[f64], _: &[f64]| Ok(g.dwq.clone().unwrap().into_data()),
        };
        let r = gradcheck_with_upstream(
            &wq_op,
            cfg.wq.as_ref().unwrap().data(),
            up.data(),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn tensor_ops_pass_gradcheck() {
        let mut rng = seeded(21);
        for kind in AttentionKind::ALL {
            let t = uniform_tensor(&mut rng, 3, 3, 2, -1.0, 1.0);
            let op = TensorAttnOp {
                kind,
                shape: t.shape(),
                cfg: AttnConfig::plain(),
            };
            let r = gradcheck(&op, t.data(), 1e-5, 1e-6, 7).unwrap();
            assert!(r.passed, "{kind}: {r:?}");
        }
    }

    #[test]
    fn constant_input_gradients() {
        let t = Tensor3::filled(3, 3, 2, 0.7);
        for kind in [AttentionKind::KaoKv, AttentionKind::KaoQkv] {
            let op = TensorAttnOp {
                kind,
                shape: t.shape(),
                cfg: AttnConfig::plain(),
            };
            let up = vec![1.0; t.len()];
            let r = gradcheck_with_upstream(&op, t.data(), &up, 1e-5, 1e-6).unwrap();
            assert!(r.passed, "{kind}: {r:?}");
        }
    }

    #[test]
    fn value_transform_gradient() {
        let mut rng = seeded(33);
        let t = uniform_tensor(&mut rng, 2, 3, 2, -1.0, 1.0);
        for kind in AttentionKind::ALL {
            let wv = uniform_matrix(&mut rng, 2, 2, -1.0, 1.0);
            let op = ValueTransformOp {
                kind,
                input: t.clone(),
                wv_shape: (2, 2),
            };
            let r = gradcheck(&op, wv.data(), 1e-5, 1e-6, 8).unwrap();
            assert!(r.passed, "{kind}: {r:?}");
        }
    }

    #[test]
    fn fold_unfold_adjoint_is_inverse() {
        // ⟨unfold(t), G⟩ = ⟨t, fold(G)⟩ exactly, since unfolding permutes entries.
        let mut rng = seeded(5);
        let t = uniform_tensor(&mut rng, 3, 4, 2, -1.0, 1.0);
        let g = uniform_matrix(&mut rng, 2, 12, -1.0, 1.0);
        let lhs: f64 = unfold_mode3(&t).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let folded = fold_mode3(&g, 3, 4).unwrap();
        let rhs: f64 = t.data().iter().zip(folded.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
        assert_eq!(unfold_mode3(&folded), g);
    }
}
