//! Dot-product attention and its tensor forms.
//!
//! `attn(Q, K, V) = V · softmax_columns(Kᵀ Q)` with `Q: d x m`, `K: d x n`,
//! `V: p x n`. The tensor operators feed it different views of an
//! `h x w x c` input:
//!
//! | operator        | query             | key / value                 |
//! |-----------------|-------------------|-----------------------------|
//! | non-local       | `X_(3)`           | `X_(3)`                     |
//! | pooled          | `X_(3)`           | unfolding of 2x2 avg-pool   |
//! | KAO_KV          | `X_(3)`           | `C = [Hᵀ, Lᵀ]`              |
//! | KAO_QKV         | `C`               | `C`, output re-expanded by outer sums |

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    avg_pool_ceil, fold_mode3, juxtapose_context, unfold_mode3, Matrix, MatmulKernel, Tensor3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    Regular,
    Pooled,
    KaoKv,
    KaoQkv,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [
        AttentionKind::Regular,
        AttentionKind::Pooled,
        AttentionKind::KaoKv,
        AttentionKind::KaoQkv,
    ];

    /// Flag spelling used by the CLI and arch files.
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Regular => "regular",
            AttentionKind::Pooled => "pooled",
            AttentionKind::KaoKv => "kao_kv",
            AttentionKind::KaoQkv => "kao_qkv",
        }
    }

    /// Row label used in operator cost tables.
    pub fn label(self) -> &'static str {
        match self {
            AttentionKind::Regular => "Attn",
            AttentionKind::Pooled => "Attn+Pool",
            AttentionKind::KaoKv => "KAO_KV",
            AttentionKind::KaoQkv => "KAO_QKV",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" | "attn" => Ok(AttentionKind::Regular),
            "pooled" | "attn+pool" => Ok(AttentionKind::Pooled),
            "kao_kv" | "kv" => Ok(AttentionKind::KaoKv),
            "kao_qkv" | "qkv" => Ok(AttentionKind::KaoQkv),
            other => Err(Error::Unsupported(format!("attention kind `{other}`"))),
        }
    }
}

/// Inference-time normalization of the coefficient matrix `E` with stored
/// per-key statistics: row `a` of `E` maps to
/// `gamma[a] * (E[a, :] - mean[a]) / sqrt(var[a] + eps) + beta[a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl CoeffNormStats {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            var: vec![1.0; n],
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            eps: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Per-row `(scale, shift)` of the equivalent affine map.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = scale
            .iter()
            .zip(&self.mean)
            .zip(&self.beta)
            .map(|((s, m), b)| b - s * m)
            .collect();
        (scale, shift)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum CoeffNorm {
    #[default]
    None,
    Stats(CoeffNormStats),
}

/// Optional linear transforms and coefficient normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttnConfig {
    /// `d' x d`, applied to the query.
    pub wq: Option<Matrix>,
    /// `d' x d`, applied to the key.
    pub wk: Option<Matrix>,
    /// `p' x p`, applied to the value.
    pub wv: Option<Matrix>,
    pub coeff_norm: CoeffNorm,
    pub kernel: MatmulKernel,
}

impl AttnConfig {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn with_value_transform(wv: Matrix) -> Self {
        Self {
            wv: Some(wv),
            ..Self::default()
        }
    }

    pub fn with_kernel(mut self, kernel: MatmulKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn use_wq(&self) -> bool {
        self.wq.is_some()
    }

    pub fn use_wk(&self) -> bool {
        self.wk.is_some()
    }

    pub fn use_wv(&self) -> bool {
        self.wv.is_some()
    }
}

/// Every intermediate of one attention evaluation, kept for backward
/// passes and for inspecting the normalized coefficients.
#[derive(Debug, Clone)]
pub struct AttnTrace {
    /// Query after the optional transform (`d' x m`).
    pub q: Matrix,
    /// Key after the optional transform (`d' x n`).
    pub k: Matrix,
    /// Value after the optional transform (`p' x n`).
    pub v: Matrix,
    /// Coefficients `E = Kᵀ Q` after optional normalization (`n x m`).
    pub scores: Matrix,
    /// `softmax_columns(scores)`; every column sums to one.
    pub probs: Matrix,
    /// `V · probs` (`p' x m`).
    pub output: Matrix,
}

fn transform(w: &Option<Matrix>, x: &Matrix, kernel: MatmulKernel) -> Result<Matrix> {
    match w {
        Some(w) => w.matmul_with(x, kernel),
        None => Ok(x.clone()),
    }
}

pub fn attn_traced(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttnConfig) -> Result<AttnTrace> {
    if k.cols() != v.cols() {
        return shape_err(
            "attn",
            format!("{} keys but {} values", k.cols(), v.cols()),
        );
    }
    let q = transform(&cfg.wq, q, cfg.kernel)?;
    let k = transform(&cfg.wk, k, cfg.kernel)?;
    let v = transform(&cfg.wv, v, cfg.kernel)?;
    if q.rows() != k.rows() {
        return shape_err(
            "attn",
            format!("query dim {} vs key dim {}", q.rows(), k.rows()),
        );
    }
    let mut scores = k.t_matmul(&q)?;
    if let CoeffNorm::Stats(stats) = &cfg.coeff_norm {
        if stats.len() != scores.rows() {
            return shape_err(
                "attn",
                format!("coefficient statistics for {} keys, got {}", stats.len(), scores.rows()),
            );
        }
        let (scale, shift) = stats.affine();
        let m = scores.cols();
        for (a, row) in scores.data_mut().chunks_mut(m).enumerate() {
            for e in row {
                *e = scale[a] * *e + shift[a];
            }
        }
    }
    let probs = scores.softmax_columns();
    let output = v.matmul_with(&probs, cfg.kernel)?;
    Ok(AttnTrace {
        q,
        k,
        v,
        scores,
        probs,
        output,
    })
}

/// `O = V' · softmax_columns(K'ᵀ Q')` where primes denote the optional
/// transforms in `cfg`.
pub fn attn(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttnConfig) -> Result<Matrix> {
    Ok(attn_traced(q, k, v, cfg)?.output)
}

/// Result of a tensor attention operator together with its internals.
#[derive(Debug, Clone)]
pub struct TensorAttnTrace {
    pub kind: AttentionKind,
    pub input_shape: (usize, usize, usize),
    pub attn: AttnTrace,
    pub output: Tensor3,
}

pub fn forward_traced(kind: AttentionKind, t: &Tensor3, cfg: &AttnConfig) -> Result<TensorAttnTrace> {
    let (h, w, _) = t.shape();
    let (attn, output) = match kind {
        AttentionKind::Regular => {
            let x = unfold_mode3(t);
            let tr = attn_traced(&x, &x, &x, cfg)?;
            let out = fold_mode3(&tr.output, h, w)?;
            (tr, out)
        }
        AttentionKind::Pooled => {
            let x = unfold_mode3(t);
            let kv = unfold_mode3(&avg_pool_ceil(t, 2)?);
            let tr = attn_traced(&x, &kv, &kv, cfg)?;
            let out = fold_mode3(&tr.output, h, w)?;
            (tr, out)
        }
        AttentionKind::KaoKv => {
            let x = unfold_mode3(t);
            let ctx = juxtapose_context(t);
            let tr = attn_traced(&x, &ctx, &ctx, cfg)?;
            let out = fold_mode3(&tr.output, h, w)?;
            (tr, out)
        }
        AttentionKind::KaoQkv => {
            let ctx = juxtapose_context(t);
            let tr = attn_traced(&ctx, &ctx, &ctx, cfg)?;
            let out = expand_outer_sum(&tr.output, h, w)?;
            (tr, out)
        }
    };
    Ok(TensorAttnTrace {
        kind,
        input_shape: t.shape(),
        attn,
        output,
    })
}

/// Splits `O = [H̃ (w cols), L̃ (h cols)]` and builds slice
/// `Y_::k = L̃_k: ⋄+ H̃_k:`, i.e. `Y[i, j, k] = L̃[k, i] + H̃[k, j]`.
pub fn expand_outer_sum(o: &Matrix, h: usize, w: usize) -> Result<Tensor3> {
    if o.cols() != h + w {
        return shape_err(
            "expand_outer_sum",
            format!("{} columns for a {h}x{w} output", o.cols()),
        );
    }
    let c = o.rows();
    Ok(Tensor3::from_fn(h, w, c, |i, j, k| o.get(k, w + i) + o.get(k, j)))
}

pub fn apply(kind: AttentionKind, t: &Tensor3, cfg: &AttnConfig) -> Result<Tensor3> {
    Ok(forward_traced(kind, t, cfg)?.output)
}

/// Self-attention over all `hw` positions of the mode-3 unfolding.
pub fn nonlocal_2d(t: &Tensor3, cfg: &AttnConfig) -> Result<Tensor3> {
    apply(AttentionKind::Regular, t, cfg)
}

/// Self-attention whose keys and values come from a 2x2 average-pooled
/// copy of the input (ceil mode for odd sizes).
pub fn attn_pooled_2d(t: &Tensor3, cfg: &AttnConfig) -> Result<Tensor3> {
    apply(AttentionKind::Pooled, t, cfg)
}

pub fn kao_kv(t: &Tensor3, cfg: &AttnConfig) -> Result<Tensor3> {
    apply(AttentionKind::KaoKv, t, cfg)
}

pub fn kao_qkv(t: &Tensor3, cfg: &AttnConfig) -> Result<Tensor3> {
    apply(AttentionKind::KaoQkv, t, cfg)
}
