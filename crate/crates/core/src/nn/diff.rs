//! [`Differentiable`] adapters so layers, modules and whole networks can
//! be finite-difference checked.

use crate::error::{shape_err, Result};
use crate::grad::Differentiable;
use crate::tensor::Tensor3;

use super::layers::{ConvUnit, Linear, Mode};
use super::module::Module;
use super::network::Network;
use super::train::softmax_cross_entropy;

fn unflatten(x: &[f64], batch: usize, (h, w, c): (usize, usize, usize)) -> Result<Vec<Tensor3>> {
    let per = h * w * c;
    if x.len() != batch * per {
        return shape_err("unflatten", format!("expected {} values, got {}", batch * per, x.len()));
    }
    x.chunks_exact(per)
        .map(|chunk| Tensor3::new(h, w, c, chunk.to_vec()))
        .collect()
}

fn flatten(ts: Vec<Tensor3>) -> Vec<f64> {
    ts.into_iter().flat_map(Tensor3::into_data).collect()
}

/// A conv → BN → activation unit differentiated w.r.t. a batch of inputs.
pub struct ConvUnitOp {
    pub unit: ConvUnit,
    pub shape: (usize, usize, usize),
    pub batch: usize,
    pub mode: Mode,
}

impl Differentiable for ConvUnitOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = unflatten(x, self.batch, self.shape)?;
        Ok(flatten(self.unit.forward(&xs, self.mode)?.0))
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let xs = unflatten(x, self.batch, self.shape)?;
        let (ys, cache) = self.unit.forward(&xs, self.mode)?;
        let gs = unflatten(upstream, self.batch, ys[0].shape())?;
        Ok(flatten(self.unit.clone().backward(&cache, &gs)?))
    }
}

/// A module differentiated w.r.t. a batch of inputs.
pub struct ModuleOp {
    pub module: Module,
    pub shape: (usize, usize, usize),
    pub batch: usize,
    pub mode: Mode,
}

impl Differentiable for ModuleOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = unflatten(x, self.batch, self.shape)?;
        Ok(flatten(self.module.forward(&xs, self.mode)?.0))
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let xs = unflatten(x, self.batch, self.shape)?;
        let (ys, cache) = self.module.forward(&xs, self.mode)?;
        let gs = unflatten(upstream, self.batch, ys[0].shape())?;
        Ok(flatten(self.module.clone().backward(&cache, &gs)?))
    }
}

/// Fully connected layer differentiated w.r.t. its input vector.
pub struct LinearOp {
    pub fc: Linear,
}

impl Differentiable for LinearOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.fc.forward_one(x)
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.fc.clone().backward_one(x, upstream)
    }
}

/// Cross-entropy loss of a network on a fixed batch, differentiated w.r.t.
/// the flattened parameter vector.
pub struct NetworkLossOp {
    pub net: Network,
    pub inputs: Vec<Tensor3>,
    pub labels: Vec<usize>,
    pub mode: Mode,
}

impl NetworkLossOp {
    fn with_params(&self, x: &[f64]) -> Result<Network> {
        let mut net = self.net.clone();
        net.set_flat_params(x)?;
        Ok(net)
    }
}

impl Differentiable for NetworkLossOp {
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let net = self.with_params(x)?;
        let (logits, _) = net.forward(&self.inputs, self.mode)?;
        Ok(vec![softmax_cross_entropy(&logits, &self.labels)?.0])
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let mut net = self.with_params(x)?;
        let (logits, cache) = net.forward(&self.inputs, self.mode)?;
        let (_, mut dlogits) = softmax_cross_entropy(&logits, &self.labels)?;
        for row in &mut dlogits {
            row.iter_mut().for_each(|g| *g *= upstream[0]);
        }
        net.zero_grad();
        net.backward(&cache, &dlogits)?;
        Ok(net.flat_grads())
    }
}
