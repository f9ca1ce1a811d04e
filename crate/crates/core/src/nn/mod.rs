//! Inverted-residual modules with optional attention, the networks built
//! from them, and a small training loop.

pub mod arch;
pub mod diff;
pub mod layers;
pub mod module;
pub mod network;
pub mod train;

pub use arch::{ArchSpec, BlockSpec, Operator, StageSpec, Width};
pub use layers::{BatchNorm, Conv, Conv1x1, Conv3x3, ConvUnit, DepthwiseConv3x3, Linear, Mode, Param};
pub use module::{forward_module, AttentionPath, Module, ModuleKind, ModuleSpec};
pub use network::{attention_keys, build_network, count_params, Block, LayerKind, LayerSpec, Network, ParamTally};
pub use train::{softmax_cross_entropy, synthetic_patterns, toy_train, Sgd, ToyTrainConfig, ToyTrainReport};
