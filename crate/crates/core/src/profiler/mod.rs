//! Cost models, timing harness, network audits and reference targets.

pub mod audit;
pub mod bench;
pub mod cost;
pub mod report;
pub mod targets;

pub use audit::{audit_network, LayerCost, NetworkAudit};
pub use bench::{benchmark, median_ms, MIN_REPEATS, WARMUPS};
pub use cost::{
    attention_dims, attention_madd, attention_memory_bytes, layer_madd, saving_pct, CostReport, OpShape,
    Savings, MODEL_VERSION,
};
pub use report::{compare_operators, to_csv, to_markdown, TableRow, Timing};
pub use targets::{parse_targets, target, targets, Target, TargetCheck, ToleranceKind};
