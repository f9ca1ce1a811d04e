//! Analytic multiply-accumulate and memory models.

use std::fmt;

use crate::attention::AttentionKind;
use crate::nn::{attention_keys, LayerKind, LayerSpec};

/// Identifies the cost model; every emitted report carries it.
pub const MODEL_VERSION: &str =
    "cost-model/1 (madd: matmul terms incl. value transform, per sample; memory: fp32 intermediates x batch)";

/// `batch x h x w x c` input of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpShape {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl OpShape {
    pub fn new(batch: usize, h: usize, w: usize, c: usize) -> Self {
        Self { batch, h, w, c }
    }
}

impl fmt::Display for OpShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.h == self.w {
            write!(f, "{}x{}^2x{}", self.batch, self.h, self.c)
        } else {
            write!(f, "{}x{}x{}x{}", self.batch, self.h, self.w, self.c)
        }
    }
}

/// `(m, n)`: number of query columns and key/value columns.
pub fn attention_dims(kind: AttentionKind, h: usize, w: usize) -> (usize, usize) {
    let n = attention_keys(kind, h, w);
    let m = match kind {
        AttentionKind::KaoQkv => h + w,
        _ => h * w,
    };
    (m, n)
}

/// Per-sample MAdd of one attention evaluation with `c` channels:
/// `KᵀQ` and `V·softmax` cost `m·n·c` each, plus `c²·n` for the value
/// transform when present. Softmax, pooling, means and outer sums are not
/// counted.
pub fn attention_madd(kind: AttentionKind, h: usize, w: usize, c: usize, value_transform: bool) -> u64 {
    let (m, n) = attention_dims(kind, h, w);
    let (m, n, c) = (m as u64, n as u64, c as u64);
    2 * m * n * c + if value_transform { c * c * n } else { 0 }
}

/// Bytes of every intermediate buffer for a batch, 4 bytes per value:
/// coefficients `E` and `softmax(E)` (`n x m` each), transformed values
/// (`c x n`), the attention output (`c x m`), the pooled key/value or
/// context matrix (`c x n`) where one is formed, and the reconstructed
/// `h x w x c` output of KAO_QKV.
pub fn attention_memory_bytes(kind: AttentionKind, shape: OpShape) -> u64 {
    let (m, n) = attention_dims(kind, shape.h, shape.w);
    let (m, n, c) = (m as u64, n as u64, shape.c as u64);
    let mut floats = 2 * n * m + c * n + c * m;
    floats += match kind {
        AttentionKind::Regular => 0,
        AttentionKind::Pooled | AttentionKind::KaoKv => c * n,
        AttentionKind::KaoQkv => c * n + (shape.h * shape.w) as u64 * c,
    };
    floats * shape.batch as u64 * 4
}

/// Per-sample MAdd of one primitive network layer.
pub fn layer_madd(layer: &LayerSpec) -> u64 {
    let (oh, ow) = (layer.output.0 as u64, layer.output.1 as u64);
    let (ih, iw) = (layer.input.0 as u64, layer.input.1 as u64);
    let (ci, co) = (layer.in_channels as u64, layer.out_channels as u64);
    match layer.kind {
        LayerKind::Conv3x3 => oh * ow * ci * co * 9,
        LayerKind::Conv1x1 => ih * iw * ci * co,
        LayerKind::DwConv3x3 => oh * ow * co * 9,
        LayerKind::FullyConnected => ci * co,
        LayerKind::Attention(kind) => attention_madd(kind, layer.input.0, layer.input.1, layer.in_channels, true),
        LayerKind::BatchNorm | LayerKind::Activation | LayerKind::AvgPoolGlobal => 0,
    }
}

/// `100 · (1 − value / baseline)`.
pub fn saving_pct(value: f64, baseline: f64) -> f64 {
    100.0 * (1.0 - value / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Savings {
    pub madd_pct: f64,
    pub memory_pct: f64,
    /// Baseline time over this operator's time, when both were measured.
    pub speedup: Option<f64>,
}

/// Costs of one operator at one input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub operator: AttentionKind,
    pub shape: OpShape,
    pub madd: u64,
    pub memory_bytes: u64,
    pub params: u64,
    pub wall_ms: Option<f64>,
    pub savings: Option<Savings>,
}

impl CostReport {
    /// Analytic fields only; the operator carries a `c x c` value transform.
    pub fn analytic(kind: AttentionKind, shape: OpShape) -> Self {
        Self {
            operator: kind,
            shape,
            madd: attention_madd(kind, shape.h, shape.w, shape.c, true),
            memory_bytes: attention_memory_bytes(kind, shape),
            params: (shape.c * shape.c) as u64,
            wall_ms: None,
            savings: None,
        }
    }

    pub fn with_savings_vs(mut self, baseline: &CostReport) -> Self {
        let speedup = match (self.wall_ms, baseline.wall_ms) {
            (Some(t), Some(b)) if t > 0.0 => Some(b / t),
            _ => None,
        };
        self.savings = Some(Savings {
            madd_pct: saving_pct(self.madd as f64, baseline.madd as f64),
            memory_pct: saving_pct(self.memory_bytes as f64, baseline.memory_bytes as f64),
            speedup,
        });
        self
    }
}
