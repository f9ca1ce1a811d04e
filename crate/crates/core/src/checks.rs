//! Verification sweeps shared by the command-line tool and the test suites:
//! finite-difference checks over every differentiable op, and the exact
//! trace identity plus Monte Carlo moments of the matrix-variate model.

use rand::Rng;

use crate::attention::{attn, attn_traced, AttentionKind, AttnConfig, CoeffNorm, CoeffNormStats};
use crate::error::{precondition, Result};
use crate::grad::{
    backward_attn_traced, gradcheck, AttnOp, Differentiable, FnOp, MatmulOp, SoftmaxOp, TensorAttnOp,
    ValueTransformOp,
};
use crate::matvar::{EntryMoments, MatrixNormalKS};
use crate::nn::diff::{ConvUnitOp, LinearOp, ModuleOp, NetworkLossOp};
use crate::nn::{
    build_network, synthetic_patterns, ArchSpec, Conv, Conv1x1, Conv3x3, ConvUnit, DepthwiseConv3x3, Linear, Mode,
    Module, ModuleKind, ModuleSpec,
};
use crate::rng::{seeded, uniform_matrix, uniform_tensor, SeededRng};
use crate::Matrix;

pub struct GradCase {
    pub name: String,
    pub op: Box<dyn Differentiable>,
    pub input: Vec<f64>,
}

const TINY_ARCH: &str = "input | operator | r | c | n | s\n\
                         6²×3 | Conv2D 3×3 | - | 4 | 1 | 2\n\
                         3²×4 | AttnSkipModule | 2 | 4 | 1 | 1\n\
                         3²×4 | BaseSkipModule | 2 | 6 | 1 | 2\n\
                         2²×6 | Conv2D 1×1 | - | 8 | 1 | 1\n\
                         2²×8 | AvgPool + FC | - | k | 1 | -\n";

fn conv_case(rng: &mut SeededRng, conv: Conv, act: bool, cin: usize, mode: Mode, name: &str) -> GradCase {
    let batch = 2;
    let mut unit = ConvUnit::new(conv, act);
    let cout = unit.conv.out_channels();
    unit.bn.running_mean = (0..cout).map(|_| rng.random_range(-0.2..0.2)).collect();
    unit.bn.running_var = (0..cout).map(|_| rng.random_range(0.5..1.5)).collect();
    GradCase {
        name: name.to_string(),
        op: Box::new(ConvUnitOp { unit, shape: (5, 4, cin), batch, mode }),
        input: uniform_tensor(rng, 5 * batch, 4, cin, -1.0, 1.0).into_data(),
    }
}

/// Every differentiable op at small random shapes. The attention kind used
/// inside modules and the network, and the batch-norm mode, rotate with the
/// seed so that consecutive seeds cover every combination.
pub fn grad_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = seeded(seed);
    let mut cases = Vec::new();
    let mut add = |name: &str, op: Box<dyn Differentiable>, input: Vec<f64>| {
        cases.push(GradCase {
            name: name.to_string(),
            op,
            input,
        })
    };
    add("softmax_columns", Box::new(SoftmaxOp { rows: 4, cols: 3 }), uniform_matrix(&mut rng, 4, 3, -2.0, 2.0).into_data());
    add(
        "matmul",
        Box::new(MatmulOp { a_shape: (3, 4), b_shape: (4, 2) }),
        uniform_matrix(&mut rng, 1, 20, -1.0, 1.0).into_data(),
    );

    let q = uniform_matrix(&mut rng, 3, 4, -1.0, 1.0);
    let k = uniform_matrix(&mut rng, 3, 5, -1.0, 1.0);
    let v = uniform_matrix(&mut rng, 2, 5, -1.0, 1.0);
    let qkv = [q.data(), k.data(), v.data()].concat();
    let attn_op = |cfg: AttnConfig| AttnOp { q_shape: (3, 4), k_shape: (3, 5), v_shape: (2, 5), cfg };
    add("attn", Box::new(attn_op(AttnConfig::plain())), qkv.clone());
    let cfg = AttnConfig {
        wq: Some(uniform_matrix(&mut rng, 2, 3, -1.0, 1.0)),
        wk: Some(uniform_matrix(&mut rng, 2, 3, -1.0, 1.0)),
        wv: Some(uniform_matrix(&mut rng, 3, 2, -1.0, 1.0)),
        coeff_norm: CoeffNorm::Stats(CoeffNormStats {
            mean: (0..5).map(|_| rng.random_range(-0.5..0.5)).collect(),
            var: (0..5).map(|_| rng.random_range(0.5..2.0)).collect(),
            gamma: (0..5).map(|_| rng.random_range(0.5..1.5)).collect(),
            beta: (0..5).map(|_| rng.random_range(-0.5..0.5)).collect(),
            eps: 1e-5,
        }),
        ..AttnConfig::plain()
    };
    add("attn+transforms+coeff_norm", Box::new(attn_op(cfg.clone())), qkv);

    let wq_input = cfg.wq.clone().expect("set above").into_data();
    let with_wq = move |x: &[f64]| -> Result<AttnConfig> {
        Ok(AttnConfig { wq: Some(Matrix::new(2, 3, x.to_vec())?), ..cfg.clone() })
    };
    let (qf, kf, vf, wqf) = (q.clone(), k.clone(), v.clone(), with_wq.clone());
    add(
        "attn:wq",
        Box::new(FnOp {
            forward: move |x: &[f64]| Ok(attn(&qf, &kf, &vf, &wqf(x)?)?.into_data()),
            backward: move |x: &[f64], g: &[f64]| {
                let c = with_wq(x)?;
                let tr = attn_traced(&q, &k, &v, &c)?;
                let up = Matrix::new(tr.output.rows(), tr.output.cols(), g.to_vec())?;
                Ok(backward_attn_traced(&q, &k, &v, &c, &tr, &up)?.dwq.expect("wq is set").into_data())
            },
        }),
        wq_input,
    );

    let (h, w, c) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(1..4));
    for kind in AttentionKind::ALL {
        let t = uniform_tensor(&mut rng, h, w, c, -1.0, 1.0);
        let wv = uniform_matrix(&mut rng, c, c, -1.0, 1.0);
        add(
            &format!("{}:input", kind.as_str()),
            Box::new(TensorAttnOp { kind, shape: (h, w, c), cfg: AttnConfig::with_value_transform(wv.clone()) }),
            t.data().to_vec(),
        );
        add(
            &format!("{}:wv", kind.as_str()),
            Box::new(ValueTransformOp { kind, input: t, wv_shape: (c, c) }),
            wv.into_data(),
        );
    }

    let conv = Conv::Full(Conv3x3::new(&mut rng, 3, 4, 2));
    let units = [
        conv_case(&mut rng, conv, true, 3, Mode::Inference, "conv3x3+bn+relu6"),
        {
            let conv = Conv::Pointwise(Conv1x1::new(&mut rng, 3, 5));
            conv_case(&mut rng, conv, true, 3, Mode::Train, "conv1x1+bn(train)+relu6")
        },
        {
            let conv = Conv::Depthwise(DepthwiseConv3x3::new(&mut rng, 3, 1));
            conv_case(&mut rng, conv, true, 3, Mode::Inference, "dwconv3x3 s1")
        },
        {
            let conv = Conv::Depthwise(DepthwiseConv3x3::new(&mut rng, 3, 2));
            conv_case(&mut rng, conv, false, 3, Mode::Train, "dwconv3x3 s2+bn(train)")
        },
    ];
    for case in units {
        add(&case.name, case.op, case.input);
    }
    let fc = Linear::new(&mut rng, 6, 3);
    add("fully_connected", Box::new(LinearOp { fc }), (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());

    let attention = AttentionKind::ALL[(seed % 4) as usize];
    let mode = if seed.is_multiple_of(2) { Mode::Train } else { Mode::Inference };
    let batch = 2;
    for kind in [ModuleKind::Base, ModuleKind::BaseSkip, ModuleKind::Attn, ModuleKind::AttnSkip] {
        for s in [1, 2] {
            let spec = ModuleSpec::new(kind, 3, 2, if s == 1 { 2 } else { 3 }, s, attention)?;
            let module = Module::new(&mut rng, spec);
            let input = uniform_tensor(&mut rng, 4 * batch, 3, 2, -1.0, 1.0).into_data();
            add(&format!("{kind} s={s}"), Box::new(ModuleOp { module, shape: (4, 3, 2), batch, mode }), input);
        }
    }

    let arch = ArchSpec::parse("tiny", TINY_ARCH)?.with_classes(3).with_attention(attention);
    let net = build_network(&arch, seed)?;
    let (inputs, labels) = synthetic_patterns(3, 6, 3, seed);
    let params = net.flat_params();
    add("network loss wrt params", Box::new(NetworkLossOp { net, inputs, labels, mode: Mode::Train }), params);
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpGradSummary {
    pub name: String,
    pub checks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs [`grad_cases`] for each seed and aggregates per op, in first-seen order.
pub fn grad_sweep(seeds: &[u64], epsilon: f64, threshold: f64) -> Result<Vec<OpGradSummary>> {
    let mut out: Vec<OpGradSummary> = Vec::new();
    for &seed in seeds {
        for case in grad_cases(seed)? {
            let r = gradcheck(case.op.as_ref(), &case.input, epsilon, threshold, seed.wrapping_add(500))?;
            match out.iter_mut().find(|s| s.name == case.name) {
                Some(s) => {
                    s.checks += 1;
                    s.max_rel_error = s.max_rel_error.max(r.max_rel_error);
                    s.passed &= r.passed;
                }
                None => out.push(OpGradSummary {
                    name: case.name,
                    checks: 1,
                    max_rel_error: r.max_rel_error,
                    passed: r.passed,
                }),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConfig {
    /// Square sizes `h = w` for the trace identity.
    pub sizes: Vec<usize>,
    pub draws: usize,
    /// Monte Carlo sample count and the `h x w` shape it is run at.
    pub samples: usize,
    pub mc_shape: (usize, usize),
    pub seed: u64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            sizes: (2..=16).collect(),
            draws: 50,
            samples: 100_000,
            mc_shape: (3, 4),
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub size: usize,
    /// `lhs`/`rhs` of the draw with the largest discrepancy.
    pub lhs: f64,
    pub rhs: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub quantity: &'static str,
    pub index: usize,
    pub model_mean: f64,
    pub sample_mean: f64,
    /// `(sample − model) / sqrt(model var / N)`.
    pub z: f64,
    pub model_var: f64,
    pub sample_var: f64,
    pub var_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub config: TheoremConfig,
    pub trace: Vec<TraceRow>,
    pub moments: Vec<MomentRow>,
}

impl TheoremReport {
    pub fn max_trace_diff(&self) -> f64 {
        self.trace.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max)
    }

    pub fn worst_z(&self) -> f64 {
        self.moments.iter().map(|m| m.z.abs()).fold(0.0, f64::max)
    }

    pub fn worst_var_rel_err(&self) -> f64 {
        self.moments.iter().map(|m| m.var_rel_err).fold(0.0, f64::max)
    }
}

/// A distribution with means in `[-2, 2)` and diagonal covariances in `[0.1, 4)`.
pub fn random_dist(rng: &mut impl Rng, h: usize, w: usize) -> Result<MatrixNormalKS> {
    MatrixNormalKS::new(
        (0..h).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..w).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..h).map(|_| rng.random_range(0.1..4.0)).collect(),
        (0..w).map(|_| rng.random_range(0.1..4.0)).collect(),
    )
}

fn moment_rows(quantity: &'static str, m: &EntryMoments, mean: &[f64], var: &[f64], out: &mut Vec<MomentRow>) {
    let n = m.count() as f64;
    for (index, ((&sm, sv), (&tm, &tv))) in m.mean().iter().zip(m.variance()).zip(mean.iter().zip(var)).enumerate() {
        out.push(MomentRow {
            quantity,
            index,
            model_mean: tm,
            sample_mean: sm,
            z: (sm - tm) / (tv / n).sqrt(),
            model_var: tv,
            sample_var: sv,
            var_rel_err: (sv - tv).abs() / tv,
        });
    }
}

pub fn verify_theorem(cfg: &TheoremConfig) -> Result<TheoremReport> {
    if cfg.draws == 0 || cfg.samples < 2 || cfg.sizes.contains(&0) || cfg.mc_shape.0 == 0 || cfg.mc_shape.1 == 0 {
        return precondition("verify_theorem", "sizes, draws and shape must be positive, samples >= 2");
    }
    let mut rng = seeded(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.sizes.len());
    for &size in &cfg.sizes {
        let mut row = TraceRow { size, lhs: 0.0, rhs: 0.0, max_abs_diff: -1.0 };
        for _ in 0..cfg.draws {
            let t = random_dist(&mut rng, size, size)?.trace_identity_check()?;
            if t.abs_diff() > row.max_abs_diff {
                row = TraceRow { size, lhs: t.lhs, rhs: t.rhs, max_abs_diff: t.abs_diff() };
            }
        }
        trace.push(row);
    }

    let (h, w) = cfg.mc_shape;
    let d = random_dist(&mut rng, h, w)?;
    let (row, col) = (d.row_average_marginal(), d.col_average_marginal());
    let mut rows = EntryMoments::new(w);
    let mut cols = EntryMoments::new(h);
    let mut entries = EntryMoments::new(h * w);
    let mut recon = EntryMoments::new(h * w);
    let mut mc = seeded(cfg.seed.wrapping_add(1));
    for _ in 0..cfg.samples {
        let x = d.sample_with(&mut mc);
        let ra: Vec<f64> = (0..w).map(|j| (0..h).map(|i| x.get(i, j)).sum::<f64>() / h as f64).collect();
        let ca: Vec<f64> = (0..h).map(|i| (0..w).map(|j| x.get(i, j)).sum::<f64>() / w as f64).collect();
        rows.push(&ra);
        cols.push(&ca);
        entries.push(x.data());
        recon.push(d.sample_reconstruction(&mut mc).data());
    }
    let mut moments = Vec::new();
    moment_rows("row_average", &rows, &row.mean, &row.cov_diag, &mut moments);
    moment_rows("column_average", &cols, &col.mean, &col.cov_diag, &mut moments);
    let entry_var: Vec<f64> = (0..h * w).map(|k| d.entry_variance(k / w, k % w)).collect();
    moment_rows("entry", &entries, d.mean_matrix().data(), &entry_var, &mut moments);
    let (rm, rv) = d.reconstruction_moments();
    moment_rows("reconstruction", &recon, rm.data(), rv.data(), &mut moments);
    Ok(TheoremReport { config: cfg.clone(), trace, moments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_theorem_run() {
        let cfg = TheoremConfig { sizes: vec![2, 4], draws: 5, samples: 2000, ..TheoremConfig::default() };
        let r = verify_theorem(&cfg).unwrap();
        assert_eq!(r.trace.len(), 2);
        assert!(r.max_trace_diff() < 1e-9);
        assert_eq!(r.moments.len(), 4 + 3 + 12 + 12);
        assert!(verify_theorem(&TheoremConfig { draws: 0, ..cfg }).is_err());
    }

    #[test]
    fn grad_cases_are_seeded() {
        let a = grad_cases(3).unwrap();
        let b = grad_cases(3).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.input, y.input);
        }
    }
}
