//! Desk-scale training: a seeded synthetic pattern task, softmax
//! cross-entropy and SGD with momentum.

use rand::Rng;

use crate::attention::AttentionKind;
use crate::error::{precondition, shape_err, Result};
use crate::rng::{seeded, standard_normal};
use crate::tensor::Tensor3;

use super::arch::ArchSpec;
use super::layers::Mode;
use super::network::{build_network, Network};

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return shape_err("softmax_cross_entropy", "one label per non-empty logit row required");
    }
    let b = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return shape_err("softmax_cross_entropy", format!("label {y} out of {} classes", z.len()));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss -= (exps[y] / sum).ln();
        grads.push(
            exps.iter()
                .enumerate()
                .map(|(k, e)| (e / sum - if k == y { 1.0 } else { 0.0 }) / b)
                .collect(),
        );
    }
    Ok((loss / b, grads))
}

/// Heavy-ball SGD: `v ← μ v + g`, `θ ← θ − lr · v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network) {
        let params = net.params_mut();
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            for ((x, g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + g;
                *x -= self.lr * *vi;
            }
        }
    }
}

/// Four spatial pattern classes: horizontal stripes, vertical stripes,
/// checkerboard and a centred blob, each with random phase/amplitude,
/// per-channel tint and additive Gaussian noise.
pub fn synthetic_patterns(n: usize, size: usize, classes: usize, seed: u64) -> (Vec<Tensor3>, Vec<usize>) {
    let mut rng = seeded(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let half = size as f64 / 2.0;
    for idx in 0..n {
        let label = idx % classes;
        let phase: usize = rng.random_range(0..4);
        let amp: f64 = rng.random_range(0.8..1.2);
        let tint: [f64; 3] = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
        let mut x = Tensor3::zeros(size, size, 3);
        for i in 0..size {
            for j in 0..size {
                let base = match label % 4 {
                    0 => if ((i + phase) / 2).is_multiple_of(2) { 1.0 } else { -1.0 },
                    1 => if ((j + phase) / 2).is_multiple_of(2) { 1.0 } else { -1.0 },
                    2 => if ((i + j + phase) / 2).is_multiple_of(2) { 1.0 } else { -1.0 },
                    _ => {
                        let d = ((i as f64 + 0.5 - half).powi(2) + (j as f64 + 0.5 - half).powi(2)).sqrt();
                        if d < half * 0.6 { 1.0 } else { -1.0 }
                    }
                };
                for (k, t) in tint.iter().enumerate() {
                    x.set(i, j, k, amp * t * base + 0.3 * standard_normal(&mut rng));
                }
            }
        }
        xs.push(x);
        ys.push(label);
    }
    (xs, ys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub attention: AttentionKind,
    pub classes: usize,
    pub samples: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            attention: AttentionKind::KaoKv,
            classes: 4,
            samples: 32,
            steps: 200,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainReport {
    pub config: ToyTrainConfig,
    /// Full-batch training loss before each step, followed by the loss
    /// after the last step.
    pub losses: Vec<f64>,
}

impl ToyTrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }
}

/// Full-batch training of the reduced KANet on [`synthetic_patterns`].
/// Batch norm uses batch statistics throughout, so every recorded loss is
/// the exact objective being minimized.
pub fn toy_train(cfg: &ToyTrainConfig) -> Result<ToyTrainReport> {
    if cfg.steps == 0 || cfg.samples == 0 {
        return precondition("toy_train", "steps and samples must be positive");
    }
    let arch = ArchSpec::toy_kanet(cfg.attention, cfg.classes);
    let mut net = build_network(&arch, cfg.seed)?;
    let size = net.input.0;
    let (xs, ys) = synthetic_patterns(cfg.samples, size, cfg.classes, cfg.seed.wrapping_add(1));
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (logits, cache) = net.forward(&xs, Mode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &ys)?;
        losses.push(loss);
        net.zero_grad();
        net.backward(&cache, &dlogits)?;
        opt.step(&mut net);
    }
    let (logits, _) = net.forward(&xs, Mode::Train)?;
    losses.push(softmax_cross_entropy(&logits, &ys)?.0);
    Ok(ToyTrainReport {
        config: cfg.clone(),
        losses,
    })
}
