//! Inverted-residual building blocks with optional parallel attention.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::layers::{
    Conv, Conv1x1, ConvUnit, ConvUnitCache, DepthwiseConv3x3, Mode, Param,
};
use crate::attention::{forward_traced, AttentionKind, AttnConfig, AttnTrace, CoeffNorm, CoeffNormStats};
use crate::error::{precondition, shape_err, Error, Result};
use crate::grad::backward_tensor_traced;
use crate::tensor::{avg_pool_ceil, avg_pool_ceil_backward, Matrix, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModuleKind {
    Base,
    BaseSkip,
    Attn,
    AttnSkip,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Base => "BaseModule",
            ModuleKind::BaseSkip => "BaseSkipModule",
            ModuleKind::Attn => "AttnModule",
            ModuleKind::AttnSkip => "AttnSkipModule",
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModuleKind::Attn | ModuleKind::AttnSkip)
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BaseModule" | "base" => Ok(ModuleKind::Base),
            "BaseSkipModule" | "base_skip" => Ok(ModuleKind::BaseSkip),
            "AttnModule" | "attn" => Ok(ModuleKind::Attn),
            "AttnSkipModule" | "attn_skip" => Ok(ModuleKind::AttnSkip),
            other => Err(Error::Unsupported(format!("module kind {other:?}"))),
        }
    }
}

/// Static description of one module instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleSpec {
    pub kind: ModuleKind,
    /// Expansion factor.
    pub r: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub s: usize,
    /// Operator on the parallel path; ignored by the base kinds.
    pub attention: AttentionKind,
}

impl ModuleSpec {
    pub fn new(
        kind: ModuleKind,
        r: usize,
        c_in: usize,
        c_out: usize,
        s: usize,
        attention: AttentionKind,
    ) -> Result<Self> {
        if r == 0 || c_in == 0 || c_out == 0 {
            return precondition("ModuleSpec", "expansion and channel counts must be ≥ 1");
        }
        if s != 1 && s != 2 {
            return precondition("ModuleSpec", format!("stride {s} not in {{1, 2}}"));
        }
        if kind.has_attention() && r < 2 {
            return precondition("ModuleSpec", "attention modules need r ≥ 2");
        }
        Ok(Self {
            kind,
            r,
            c_in,
            c_out,
            s,
            attention,
        })
    }

    /// Residual `y += x` around the whole block.
    pub fn inner_skip(&self) -> bool {
        self.s == 1 && self.c_in == self.c_out
    }

    /// Input reuse inside the block (concatenation for BaseSkip, an added
    /// identity on the attention path for AttnSkip).
    pub fn concat_skip(&self) -> bool {
        self.s == 1 && matches!(self.kind, ModuleKind::BaseSkip | ModuleKind::AttnSkip)
    }

    /// Output channels of the first 1x1 convolution (0 when omitted).
    pub fn expand_channels(&self) -> usize {
        let full = self.r * self.c_in;
        match self.kind {
            ModuleKind::Base => {
                if self.r == 1 {
                    0
                } else {
                    full
                }
            }
            ModuleKind::BaseSkip if !self.concat_skip() => {
                if self.r == 1 {
                    0
                } else {
                    full
                }
            }
            _ => (self.r - 1) * self.c_in,
        }
    }

    /// Channels entering the depthwise convolution.
    pub fn depthwise_channels(&self) -> usize {
        match self.kind {
            ModuleKind::Attn | ModuleKind::AttnSkip => (self.r - 1) * self.c_in,
            _ => self.r * self.c_in,
        }
    }

    /// Channels entering the final projection: always `r · c_in`.
    pub fn project_channels(&self) -> usize {
        self.r * self.c_in
    }

    pub fn out_size(&self, n: usize) -> usize {
        n.div_ceil(self.s)
    }
}

/// Attention operator with a value transform `W^V` (`c x c`).
#[derive(Debug, Clone)]
pub struct AttentionPath {
    pub kind: AttentionKind,
    pub c: usize,
    pub wv: Param,
    pub coeff_norm: Option<CoeffNormStats>,
}

impl AttentionPath {
    pub fn new(rng: &mut impl Rng, kind: AttentionKind, c: usize) -> Self {
        Self {
            kind,
            c,
            wv: Param::xavier(rng, c * c, c, c),
            coeff_norm: None,
        }
    }

    pub fn config(&self) -> Result<AttnConfig> {
        let mut cfg = AttnConfig::with_value_transform(Matrix::new(self.c, self.c, self.wv.value.clone())?);
        if let Some(stats) = &self.coeff_norm {
            cfg.coeff_norm = CoeffNorm::Stats(stats.clone());
        }
        Ok(cfg)
    }

    pub fn forward_one(&self, x: &Tensor3) -> Result<(Tensor3, AttnTrace)> {
        let tr = forward_traced(self.kind, x, &self.config()?)?;
        Ok((tr.output, tr.attn))
    }

    pub fn backward_one(&mut self, x: &Tensor3, trace: &AttnTrace, dy: &Tensor3) -> Result<Tensor3> {
        let g = backward_tensor_traced(self.kind, x, &self.config()?, trace, dy)?;
        if let Some(dwv) = g.dwv {
            for (a, b) in self.wv.grad.iter_mut().zip(dwv.data()) {
                *a += b;
            }
        }
        Ok(g.input)
    }
}

/// One instantiated module with its parameters.
#[derive(Debug, Clone)]
pub struct Module {
    pub spec: ModuleSpec,
    pub expand: Option<ConvUnit>,
    pub depthwise: Option<ConvUnit>,
    pub attention: Option<AttentionPath>,
    pub project: ConvUnit,
}

/// Intermediates of [`Module::forward`].
#[derive(Debug, Clone)]
pub struct ModuleCache {
    input: Vec<Tensor3>,
    expand: Option<ConvUnitCache>,
    depthwise: Option<ConvUnitCache>,
    attn: Vec<AttnTrace>,
    project: ConvUnitCache,
}

fn concat_batch(a: &[Tensor3], b: &[Tensor3]) -> Result<Vec<Tensor3>> {
    a.iter().zip(b).map(|(x, y)| x.concat_channels(y)).collect()
}

fn split_batch(xs: &[Tensor3], at: usize) -> Result<(Vec<Tensor3>, Vec<Tensor3>)> {
    let mut left = Vec::with_capacity(xs.len());
    let mut right = Vec::with_capacity(xs.len());
    for x in xs {
        let (l, r) = x.split_channels(at)?;
        left.push(l);
        right.push(r);
    }
    Ok((left, right))
}

fn add_batch(into: &mut [Tensor3], other: &[Tensor3]) -> Result<()> {
    for (a, b) in into.iter_mut().zip(other) {
        a.add_assign(b)?;
    }
    Ok(())
}

impl Module {
    /// Xavier-initialized weights, batch norms at their defaults.
    pub fn new(rng: &mut impl Rng, spec: ModuleSpec) -> Self {
        let e = spec.expand_channels();
        let expand = (e > 0).then(|| ConvUnit::new(Conv::Pointwise(Conv1x1::new(rng, spec.c_in, e)), true));
        let d = spec.depthwise_channels();
        let depthwise =
            (d > 0).then(|| ConvUnit::new(Conv::Depthwise(DepthwiseConv3x3::new(rng, d, spec.s)), true));
        let attention = spec
            .kind
            .has_attention()
            .then(|| AttentionPath::new(rng, spec.attention, spec.c_in));
        let project = ConvUnit::new(
            Conv::Pointwise(Conv1x1::new(rng, spec.project_channels(), spec.c_out)),
            false,
        );
        Self {
            spec,
            expand,
            depthwise,
            attention,
            project,
        }
    }

    pub fn forward(&self, xs: &[Tensor3], mode: Mode) -> Result<(Vec<Tensor3>, ModuleCache)> {
        let spec = &self.spec;
        if let Some(x) = xs.iter().find(|x| x.c() != spec.c_in) {
            return shape_err(
                "forward_module",
                format!("expected {} input channels, got {}", spec.c_in, x.c()),
            );
        }
        let (expanded, expand_cache) = match &self.expand {
            Some(u) => {
                let (y, c) = u.forward(xs, mode)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let dw_in = match (spec.kind, expanded) {
            (ModuleKind::Attn | ModuleKind::AttnSkip, e) => e,
            (ModuleKind::BaseSkip, Some(e)) if spec.concat_skip() => Some(concat_batch(&e, xs)?),
            (_, Some(e)) => Some(e),
            (_, None) => Some(xs.to_vec()),
        };
        let (dw_out, dw_cache) = match (&self.depthwise, dw_in) {
            (Some(u), Some(a)) => {
                let (y, c) = u.forward(&a, mode)?;
                (Some(y), Some(c))
            }
            _ => (None, None),
        };
        let mut traces = Vec::new();
        let proj_in = match &self.attention {
            Some(path) => {
                let mut z = Vec::with_capacity(xs.len());
                for x in xs {
                    let (mut o, tr) = path.forward_one(x)?;
                    if spec.concat_skip() {
                        o.add_assign(x)?;
                    }
                    if spec.s > 1 {
                        o = avg_pool_ceil(&o, spec.s)?;
                    }
                    z.push(o);
                    traces.push(tr);
                }
                match dw_out {
                    Some(d) => concat_batch(&d, &z)?,
                    None => z,
                }
            }
            None => dw_out.expect("base modules always have a depthwise stage"),
        };
        let (mut ys, project_cache) = self.project.forward(&proj_in, mode)?;
        if spec.inner_skip() {
            add_batch(&mut ys, xs)?;
        }
        Ok((
            ys,
            ModuleCache {
                input: xs.to_vec(),
                expand: expand_cache,
                depthwise: dw_cache,
                attn: traces,
                project: project_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ModuleCache, dys: &[Tensor3]) -> Result<Vec<Tensor3>> {
        let spec = self.spec;
        let xs = &cache.input;
        let mut dx: Vec<Tensor3> = if spec.inner_skip() {
            dys.to_vec()
        } else {
            xs.iter().map(|x| Tensor3::zeros(x.h(), x.w(), x.c())).collect()
        };
        let d_proj_in = self.project.backward(&cache.project, dys)?;
        let d_dw_out = match &mut self.attention {
            Some(path) => {
                let conv_c = spec.depthwise_channels();
                let (d_conv, d_attn) = if conv_c > 0 {
                    let (a, b) = split_batch(&d_proj_in, conv_c)?;
                    (Some(a), b)
                } else {
                    (None, d_proj_in)
                };
                for (((x, tr), g), dxi) in xs.iter().zip(&cache.attn).zip(&d_attn).zip(dx.iter_mut()) {
                    let g = if spec.s > 1 {
                        avg_pool_ceil_backward(g, x.h(), x.w(), spec.s)?
                    } else {
                        g.clone()
                    };
                    if spec.concat_skip() {
                        dxi.add_assign(&g)?;
                    }
                    dxi.add_assign(&path.backward_one(x, tr, &g)?)?;
                }
                d_conv
            }
            None => Some(d_proj_in),
        };
        let d_dw_in = match (&mut self.depthwise, &cache.depthwise, d_dw_out) {
            (Some(u), Some(c), Some(g)) => Some(u.backward(c, &g)?),
            _ => None,
        };
        let d_expanded = match (spec.kind, d_dw_in) {
            (ModuleKind::BaseSkip, Some(g)) if spec.concat_skip() && self.expand.is_some() => {
                let (de, dxs) = split_batch(&g, spec.expand_channels())?;
                add_batch(&mut dx, &dxs)?;
                Some(de)
            }
            (_, Some(g)) if self.expand.is_some() => Some(g),
            (_, Some(g)) => {
                add_batch(&mut dx, &g)?;
                None
            }
            (_, None) => None,
        };
        if let (Some(u), Some(c), Some(g)) = (&mut self.expand, &cache.expand, d_expanded) {
            add_batch(&mut dx, &u.backward(c, &g)?)?;
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(u) = &self.expand {
            out.extend(u.params());
        }
        if let Some(u) = &self.depthwise {
            out.extend(u.params());
        }
        if let Some(a) = &self.attention {
            out.push(&a.wv);
        }
        out.extend(self.project.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(u) = &mut self.expand {
            out.extend(u.params_mut());
        }
        if let Some(u) = &mut self.depthwise {
            out.extend(u.params_mut());
        }
        if let Some(a) = &mut self.attention {
            out.push(&mut a.wv);
        }
        out.extend(self.project.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Inference-mode forward of a single tensor.
pub fn forward_module(module: &Module, t: &Tensor3) -> Result<Tensor3> {
    let (mut ys, _) = module.forward(std::slice::from_ref(t), Mode::Inference)?;
    Ok(ys.pop().expect("one output per input"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::BatchNorm;
    use crate::rng::{seeded, uniform_tensor};

    fn spec(kind: ModuleKind, r: usize, c_in: usize, c_out: usize, s: usize) -> ModuleSpec {
        ModuleSpec::new(kind, r, c_in, c_out, s, AttentionKind::KaoKv).unwrap()
    }

    #[test]
    fn identity_base_module_doubles_input() {
        let mut rng = seeded(0);
        let mut m = Module::new(&mut rng, spec(ModuleKind::Base, 1, 3, 3, 1));
        assert!(m.expand.is_none());
        let dw = m.depthwise.as_mut().unwrap();
        dw.conv.weight_mut().value.fill(0.0);
        for ch in 0..3 {
            dw.conv.weight_mut().value[4 * 3 + ch] = 1.0;
        }
        dw.bn = BatchNorm::identity(3);
        dw.act = false;
        let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        m.project.conv.weight_mut().value = eye;
        m.project.bn = BatchNorm::identity(3);
        let x = uniform_tensor(&mut rng, 4, 4, 3, -1.0, 1.0);
        let y = forward_module(&m, &x).unwrap();
        assert!(y.max_abs_diff(&x.scale(2.0)) < 1e-15);
    }

    #[test]
    fn output_shapes_follow_stride() {
        let mut rng = seeded(1);
        for kind in [ModuleKind::Base, ModuleKind::BaseSkip, ModuleKind::Attn, ModuleKind::AttnSkip] {
            for s in [1, 2] {
                let m = Module::new(&mut rng, spec(kind, 3, 4, 5, s));
                let x = uniform_tensor(&mut rng, 7, 6, 4, -1.0, 1.0);
                let y = forward_module(&m, &x).unwrap();
                assert_eq!(y.shape(), (7usize.div_ceil(s), 6usize.div_ceil(s), 5), "{kind} s={s}");
            }
        }
    }

    #[test]
    fn skip_variants_share_attention_costs() {
        let mut rng = seeded(2);
        let a = Module::new(&mut rng, spec(ModuleKind::Attn, 6, 8, 8, 1));
        let b = Module::new(&mut rng, spec(ModuleKind::AttnSkip, 6, 8, 8, 1));
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn base_skip_saves_c_squared_weights() {
        let mut rng = seeded(3);
        let c = 8;
        let a = Module::new(&mut rng, spec(ModuleKind::Base, 6, c, 16, 1));
        let b = Module::new(&mut rng, spec(ModuleKind::BaseSkip, 6, c, 16, 1));
        let conv_weights = |m: &Module| {
            m.expand.as_ref().map_or(0, |u| u.conv.weight().len())
                + m.depthwise.as_ref().map_or(0, |u| u.conv.weight().len())
                + m.project.conv.weight().len()
        };
        assert_eq!(conv_weights(&a) - conv_weights(&b), c * c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModuleSpec::new(ModuleKind::Base, 1, 3, 3, 3, AttentionKind::Regular).is_err());
        assert!(ModuleSpec::new(ModuleKind::Attn, 1, 3, 3, 1, AttentionKind::Regular).is_err());
        assert!(ModuleSpec::new(ModuleKind::Base, 0, 3, 3, 1, AttentionKind::Regular).is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = seeded(4);
        let m = Module::new(&mut rng, spec(ModuleKind::Base, 2, 3, 3, 1));
        assert!(forward_module(&m, &Tensor3::zeros(4, 4, 2)).is_err());
    }
}
