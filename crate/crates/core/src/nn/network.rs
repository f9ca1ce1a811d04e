//! A full network instantiated from an [`ArchSpec`].

use std::fmt;

use crate::attention::AttentionKind;
use crate::error::{shape_err, Result};
use crate::rng::seeded;
use crate::tensor::Tensor3;

use super::arch::{ArchSpec, BlockSpec};
use super::layers::{
    conv3x3_out, global_avg_pool, global_avg_pool_backward, Conv, Conv1x1, Conv3x3, ConvUnit,
    ConvUnitCache, Linear, Mode, Param,
};
use super::module::{Module, ModuleCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    DwConv3x3,
    BatchNorm,
    Activation,
    AvgPoolGlobal,
    FullyConnected,
    Attention(AttentionKind),
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv3x3 => f.write_str("conv3x3"),
            LayerKind::Conv1x1 => f.write_str("conv1x1"),
            LayerKind::DwConv3x3 => f.write_str("dwconv3x3"),
            LayerKind::BatchNorm => f.write_str("batchnorm"),
            LayerKind::Activation => f.write_str("activation"),
            LayerKind::AvgPoolGlobal => f.write_str("avgpool_global"),
            LayerKind::FullyConnected => f.write_str("fully_connected"),
            LayerKind::Attention(k) => write!(f, "attention:{}", k.as_str()),
        }
    }
}

/// One primitive layer with the spatial sizes it sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Input spatial size `(h, w)`.
    pub input: (usize, usize),
    /// Output spatial size `(h, w)`.
    pub output: (usize, usize),
    pub params: usize,
}

/// Parameter counts per layer and in total.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTally {
    pub layers: Vec<(String, usize)>,
    pub total: usize,
    /// Scale and shift for a norm over the `n` key rows of every
    /// attention coefficient matrix; not part of `total`.
    pub coeff_norm: usize,
}

impl ParamTally {
    pub fn total_with_coeff_norm(&self) -> usize {
        self.total + self.coeff_norm
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Conv(ConvUnit),
    Module(Module),
    Head(Linear),
}

#[derive(Debug, Clone)]
enum BlockCache {
    Conv(ConvUnitCache),
    Module(ModuleCache),
    Head { pooled: Vec<Vec<f64>>, shape: (usize, usize) },
}

/// Intermediates of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct NetCache {
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub input: (usize, usize, usize),
    pub blocks: Vec<Block>,
    pub labels: Vec<String>,
    pub classes: usize,
}

/// Number of keys `n` the attention operator uses on an `h x w` input.
pub fn attention_keys(kind: AttentionKind, h: usize, w: usize) -> usize {
    match kind {
        AttentionKind::Regular => h * w,
        AttentionKind::Pooled => h.div_ceil(2) * w.div_ceil(2),
        AttentionKind::KaoKv | AttentionKind::KaoQkv => h + w,
    }
}

/// Instantiates every layer with Xavier-initialized weights drawn from a
/// generator seeded with `seed`.
pub fn build_network(arch: &ArchSpec, seed: u64) -> Result<Network> {
    let specs = arch.blocks()?;
    let mut rng = seeded(seed);
    let mut blocks = Vec::with_capacity(specs.len());
    let mut labels = Vec::with_capacity(specs.len());
    let mut module_idx = 0;
    for spec in specs {
        match spec {
            BlockSpec::Conv3x3 { cin, cout, stride } => {
                labels.push(if blocks.is_empty() { "stem".to_string() } else { format!("conv3x3.{}", blocks.len()) });
                blocks.push(Block::Conv(ConvUnit::new(
                    Conv::Full(Conv3x3::new(&mut rng, cin, cout, stride)),
                    true,
                )));
            }
            BlockSpec::Conv1x1 { cin, cout } => {
                labels.push("head_conv".to_string());
                blocks.push(Block::Conv(ConvUnit::new(
                    Conv::Pointwise(Conv1x1::new(&mut rng, cin, cout)),
                    true,
                )));
            }
            BlockSpec::Module(m) => {
                module_idx += 1;
                labels.push(format!("module{module_idx:02}"));
                blocks.push(Block::Module(Module::new(&mut rng, m)));
            }
            BlockSpec::Head { cin, classes } => {
                labels.push("classifier".to_string());
                blocks.push(Block::Head(Linear::new(&mut rng, cin, classes)));
            }
        }
    }
    Ok(Network {
        name: arch.name.clone(),
        input: arch.stages[0].input,
        blocks,
        labels,
        classes: arch.classes,
    })
}

fn unit_layers(
    out: &mut Vec<LayerSpec>,
    prefix: &str,
    unit: &ConvUnit,
    input: (usize, usize),
    in_channels: usize,
) -> (usize, usize) {
    let (kind, stride, cout) = match &unit.conv {
        Conv::Full(c) => (LayerKind::Conv3x3, c.stride, c.cout),
        Conv::Pointwise(c) => (LayerKind::Conv1x1, 1, c.cout),
        Conv::Depthwise(c) => (LayerKind::DwConv3x3, c.stride, c.c),
    };
    let output = (conv3x3_out(input.0, stride), conv3x3_out(input.1, stride));
    let output = if kind == LayerKind::Conv1x1 { input } else { output };
    let name = format!("{prefix}.{kind}");
    out.push(LayerSpec {
        name,
        kind,
        in_channels,
        out_channels: cout,
        stride,
        input,
        output,
        params: unit.conv.weight().len(),
    });
    out.push(LayerSpec {
        name: format!("{prefix}.bn"),
        kind: LayerKind::BatchNorm,
        in_channels: cout,
        out_channels: cout,
        stride: 1,
        input: output,
        output,
        params: unit.bn.gamma.len() + unit.bn.beta.len(),
    });
    if unit.act {
        out.push(LayerSpec {
            name: format!("{prefix}.relu6"),
            kind: LayerKind::Activation,
            in_channels: cout,
            out_channels: cout,
            stride: 1,
            input: output,
            output,
            params: 0,
        });
    }
    output
}

impl Network {
    pub fn modules(&self) -> impl Iterator<Item = &Module> {
        self.blocks.iter().filter_map(|b| match b {
            Block::Module(m) => Some(m),
            _ => None,
        })
    }

    /// Flat list of primitive layers in execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let (mut h, mut w, mut c) = self.input;
        for (block, label) in self.blocks.iter().zip(&self.labels) {
            match block {
                Block::Conv(u) => {
                    (h, w) = unit_layers(&mut out, label, u, (h, w), c);
                    c = u.conv.out_channels();
                }
                Block::Module(m) => {
                    let spec = m.spec;
                    let input = (h, w);
                    let mut cur = input;
                    if let Some(u) = &m.expand {
                        unit_layers(&mut out, &format!("{label}.expand"), u, cur, spec.c_in);
                    }
                    if let Some(u) = &m.depthwise {
                        cur = unit_layers(&mut out, &format!("{label}.dw"), u, cur, spec.depthwise_channels());
                    }
                    if let Some(a) = &m.attention {
                        out.push(LayerSpec {
                            name: format!("{label}.attn"),
                            kind: LayerKind::Attention(a.kind),
                            in_channels: a.c,
                            out_channels: a.c,
                            stride: spec.s,
                            input,
                            output: (spec.out_size(h), spec.out_size(w)),
                            params: a.wv.len(),
                        });
                    }
                    let out_hw = (spec.out_size(h), spec.out_size(w));
                    debug_assert!(m.depthwise.is_none() || cur == out_hw);
                    unit_layers(&mut out, &format!("{label}.project"), &m.project, out_hw, spec.project_channels());
                    (h, w, c) = (out_hw.0, out_hw.1, spec.c_out);
                }
                Block::Head(fc) => {
                    out.push(LayerSpec {
                        name: format!("{label}.avgpool"),
                        kind: LayerKind::AvgPoolGlobal,
                        in_channels: c,
                        out_channels: c,
                        stride: 1,
                        input: (h, w),
                        output: (1, 1),
                        params: 0,
                    });
                    out.push(LayerSpec {
                        name: format!("{label}.fc"),
                        kind: LayerKind::FullyConnected,
                        in_channels: fc.cin,
                        out_channels: fc.cout,
                        stride: 1,
                        input: (1, 1),
                        output: (1, 1),
                        params: fc.weight.len() + fc.bias.len(),
                    });
                    (h, w, c) = (1, 1, fc.cout);
                }
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b {
                Block::Conv(u) => out.extend(u.params()),
                Block::Module(m) => out.extend(m.params()),
                Block::Head(fc) => out.extend([&fc.weight, &fc.bias]),
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            match b {
                Block::Conv(u) => out.extend(u.params_mut()),
                Block::Module(m) => out.extend(m.params_mut()),
                Block::Head(fc) => out.extend([&mut fc.weight, &mut fc.bias]),
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params().iter().map(|p| p.len()).sum();
        if flat.len() != total {
            return shape_err("set_flat_params", format!("expected {total} values, got {}", flat.len()));
        }
        let mut rest = flat;
        for p in self.params_mut() {
            let (head, tail) = rest.split_at(p.len());
            p.value.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    /// Logits for every sample of the batch.
    pub fn forward(&self, xs: &[Tensor3], mode: Mode) -> Result<(Vec<Vec<f64>>, NetCache)> {
        if let Some(x) = xs.iter().find(|x| x.shape() != self.input) {
            return shape_err(
                "Network::forward",
                format!("expected input {:?}, got {:?}", self.input, x.shape()),
            );
        }
        let mut cur = xs.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            match b {
                Block::Conv(u) => {
                    let (y, c) = u.forward(&cur, mode)?;
                    caches.push(BlockCache::Conv(c));
                    cur = y;
                }
                Block::Module(m) => {
                    let (y, c) = m.forward(&cur, mode)?;
                    caches.push(BlockCache::Module(c));
                    cur = y;
                }
                Block::Head(fc) => {
                    let shape = (cur[0].h(), cur[0].w());
                    let pooled: Vec<Vec<f64>> = cur.iter().map(global_avg_pool).collect();
                    let logits = pooled.iter().map(|p| fc.forward_one(p)).collect::<Result<Vec<_>>>()?;
                    caches.push(BlockCache::Head { pooled, shape });
                    return Ok((logits, NetCache { blocks: caches }));
                }
            }
        }
        shape_err("Network::forward", "network has no classifier head")
    }

    pub fn predict(&self, x: &Tensor3) -> Result<Vec<f64>> {
        let (mut logits, _) = self.forward(std::slice::from_ref(x), Mode::Inference)?;
        Ok(logits.pop().expect("one sample"))
    }

    /// Accumulates parameter gradients for `d loss / d logits` and returns
    /// the input gradients.
    pub fn backward(&mut self, cache: &NetCache, dlogits: &[Vec<f64>]) -> Result<Vec<Tensor3>> {
        let mut grads: Vec<Tensor3> = Vec::new();
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            grads = match (b, c) {
                (Block::Head(fc), BlockCache::Head { pooled, shape }) => pooled
                    .iter()
                    .zip(dlogits)
                    .map(|(p, g)| Ok(global_avg_pool_backward(&fc.backward_one(p, g)?, shape.0, shape.1)))
                    .collect::<Result<Vec<_>>>()?,
                (Block::Conv(u), BlockCache::Conv(c)) => u.backward(c, &grads)?,
                (Block::Module(m), BlockCache::Module(c)) => m.backward(c, &grads)?,
                _ => return shape_err("Network::backward", "cache does not match network"),
            };
        }
        Ok(grads)
    }
}

pub fn count_params(net: &Network) -> ParamTally {
    let layers: Vec<(String, usize)> = net
        .layers()
        .into_iter()
        .filter(|l| l.params > 0)
        .map(|l| (l.name, l.params))
        .collect();
    let total = layers.iter().map(|(_, n)| n).sum();
    let coeff_norm = net
        .layers()
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::Attention(k) => Some(2 * attention_keys(k, l.input.0, l.input.1)),
            _ => None,
        })
        .sum();
    ParamTally {
        layers,
        total,
        coeff_norm,
    }
}
