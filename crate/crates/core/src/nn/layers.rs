//! Convolution, batch-norm, activation and linear layers over batches of
//! `h x w x c` tensors.
//!
//! Every layer has a `forward` that takes `&self` and returns the output
//! together with a cache, and a `backward` that consumes the cache,
//! accumulates parameter gradients into [`Param::grad`] and returns the
//! input gradient.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor3;

/// Trainable values with an accumulated gradient of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn filled(len: usize, v: f64) -> Self {
        Self::new(vec![v; len])
    }

    /// Xavier/Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(rng: &mut impl Rng, len: usize, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::new((0..len).map(|_| rng.random_range(-a..a)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Inference uses stored statistics; training normalizes with batch
/// statistics over `(batch, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Inference,
    Train,
}

fn check_channels(op: &'static str, xs: &[Tensor3], c: usize) -> Result<()> {
    if xs.is_empty() {
        return shape_err(op, "empty batch");
    }
    if let Some(x) = xs.iter().find(|x| x.c() != c) {
        return shape_err(op, format!("expected {c} channels, got {}", x.c()));
    }
    Ok(())
}

/// Output size of a 3x3 same-padded convolution: `ceil(n / stride)`.
pub fn conv3x3_out(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

/// Pointwise convolution. Weight layout is `cout x cin`, row-major.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
}

impl Conv1x1 {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: Param::xavier(rng, cin * cout, cin, cout),
        }
    }

    pub fn forward_one(&self, x: &Tensor3) -> Result<Tensor3> {
        if x.c() != self.cin {
            return shape_err("Conv1x1", format!("expected {} channels, got {}", self.cin, x.c()));
        }
        let (h, w, _) = x.shape();
        let mut y = Tensor3::zeros(h, w, self.cout);
        let wt = &self.weight.value;
        for (xp, yp) in x
            .data()
            .chunks_exact(self.cin)
            .zip(y.data_mut().chunks_exact_mut(self.cout))
        {
            for (o, yv) in yp.iter_mut().enumerate() {
                let row = &wt[o * self.cin..(o + 1) * self.cin];
                *yv = row.iter().zip(xp).map(|(a, b)| a * b).sum();
            }
        }
        Ok(y)
    }

    pub fn backward_one(&mut self, x: &Tensor3, dy: &Tensor3) -> Result<Tensor3> {
        if dy.c() != self.cout || (dy.h(), dy.w()) != (x.h(), x.w()) {
            return shape_err("Conv1x1::backward", "upstream shape");
        }
        let mut dx = Tensor3::zeros(x.h(), x.w(), self.cin);
        let (cin, cout) = (self.cin, self.cout);
        let wt = &self.weight.value;
        let gw = &mut self.weight.grad;
        for ((xp, gp), dxp) in x
            .data()
            .chunks_exact(cin)
            .zip(dy.data().chunks_exact(cout))
            .zip(dx.data_mut().chunks_exact_mut(cin))
        {
            for (o, &g) in gp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &wt[o * cin..(o + 1) * cin];
                let grow = &mut gw[o * cin..(o + 1) * cin];
                for i in 0..cin {
                    dxp[i] += row[i] * g;
                    grow[i] += xp[i] * g;
                }
            }
        }
        Ok(dx)
    }
}

/// Depthwise 3x3 convolution, zero "same" padding of one pixel.
/// Weight layout is tap-major: `weight[(di * 3 + dj) * c + ch]`.
#[derive(Debug, Clone)]
pub struct DepthwiseConv3x3 {
    pub c: usize,
    pub stride: usize,
    pub weight: Param,
}

impl DepthwiseConv3x3 {
    pub fn new(rng: &mut impl Rng, c: usize, stride: usize) -> Self {
        Self {
            c,
            stride,
            weight: Param::xavier(rng, 9 * c, 9, 9),
        }
    }

    pub fn forward_one(&self, x: &Tensor3) -> Result<Tensor3> {
        if x.c() != self.c {
            return shape_err("DepthwiseConv3x3", format!("expected {} channels, got {}", self.c, x.c()));
        }
        let (h, w, c) = x.shape();
        let (ho, wo) = (conv3x3_out(h, self.stride), conv3x3_out(w, self.stride));
        let mut y = Tensor3::zeros(ho, wo, c);
        let wt = &self.weight.value;
        for oi in 0..ho {
            for oj in 0..wo {
                let base = (oi * wo + oj) * c;
                for di in 0..3 {
                    let Some(i) = (oi * self.stride + di).checked_sub(1).filter(|&i| i < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(j) = (oj * self.stride + dj).checked_sub(1).filter(|&j| j < w)
                        else {
                            continue;
                        };
                        let tap = &wt[(di * 3 + dj) * c..(di * 3 + dj + 1) * c];
                        let xf = x.fiber(i, j);
                        let yf = &mut y.data_mut()[base..base + c];
                        for ch in 0..c {
                            yf[ch] += tap[ch] * xf[ch];
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward_one(&mut self, x: &Tensor3, dy: &Tensor3) -> Result<Tensor3> {
        let (h, w, c) = x.shape();
        let (ho, wo) = (conv3x3_out(h, self.stride), conv3x3_out(w, self.stride));
        if dy.shape() != (ho, wo, c) {
            return shape_err("DepthwiseConv3x3::backward", "upstream shape");
        }
        let mut dx = Tensor3::zeros(h, w, c);
        for oi in 0..ho {
            for oj in 0..wo {
                let g = dy.fiber(oi, oj);
                for di in 0..3 {
                    let Some(i) = (oi * self.stride + di).checked_sub(1).filter(|&i| i < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(j) = (oj * self.stride + dj).checked_sub(1).filter(|&j| j < w)
                        else {
                            continue;
                        };
                        let t0 = (di * 3 + dj) * c;
                        for ch in 0..c {
                            self.weight.grad[t0 + ch] += g[ch] * x.get(i, j, ch);
                            dx.add_at(i, j, ch, g[ch] * self.weight.value[t0 + ch]);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Full 3x3 convolution with same padding. Weight layout is
/// `cout x 3 x 3 x cin`: `weight[((o * 3 + di) * 3 + dj) * cin + i]`.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Param,
}

impl Conv3x3 {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            stride,
            weight: Param::xavier(rng, 9 * cin * cout, 9 * cin, 9 * cout),
        }
    }

    #[inline]
    fn widx(&self, o: usize, di: usize, dj: usize) -> usize {
        ((o * 3 + di) * 3 + dj) * self.cin
    }

    pub fn forward_one(&self, x: &Tensor3) -> Result<Tensor3> {
        if x.c() != self.cin {
            return shape_err("Conv3x3", format!("expected {} channels, got {}", self.cin, x.c()));
        }
        let (h, w, _) = x.shape();
        let (ho, wo) = (conv3x3_out(h, self.stride), conv3x3_out(w, self.stride));
        let mut y = Tensor3::zeros(ho, wo, self.cout);
        for oi in 0..ho {
            for oj in 0..wo {
                for di in 0..3 {
                    let Some(i) = (oi * self.stride + di).checked_sub(1).filter(|&i| i < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(j) = (oj * self.stride + dj).checked_sub(1).filter(|&j| j < w)
                        else {
                            continue;
                        };
                        let xf = x.fiber(i, j);
                        for o in 0..self.cout {
                            let k = self.widx(o, di, dj);
                            let wrow = &self.weight.value[k..k + self.cin];
                            let s: f64 = wrow.iter().zip(xf).map(|(a, b)| a * b).sum();
                            y.add_at(oi, oj, o, s);
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward_one(&mut self, x: &Tensor3, dy: &Tensor3) -> Result<Tensor3> {
        let (h, w, _) = x.shape();
        let (ho, wo) = (conv3x3_out(h, self.stride), conv3x3_out(w, self.stride));
        if dy.shape() != (ho, wo, self.cout) {
            return shape_err("Conv3x3::backward", "upstream shape");
        }
        let mut dx = Tensor3::zeros(h, w, self.cin);
        for oi in 0..ho {
            for oj in 0..wo {
                for di in 0..3 {
                    let Some(i) = (oi * self.stride + di).checked_sub(1).filter(|&i| i < h) else {
                        continue;
                    };
                    for dj in 0..3 {
                        let Some(j) = (oj * self.stride + dj).checked_sub(1).filter(|&j| j < w)
                        else {
                            continue;
                        };
                        for o in 0..self.cout {
                            let g = dy.get(oi, oj, o);
                            if g == 0.0 {
                                continue;
                            }
                            let k = self.widx(o, di, dj);
                            for ci in 0..self.cin {
                                self.weight.grad[k + ci] += g * x.get(i, j, ci);
                                dx.add_at(i, j, ci, g * self.weight.value[k + ci]);
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Per-channel batch normalization with scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// State kept by [`BatchNorm::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    xhat: Vec<Tensor3>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            gamma: Param::filled(c, 1.0),
            beta: Param::filled(c, 0.0),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Statistics and affine set so inference mode is exactly the identity.
    pub fn identity(c: usize) -> Self {
        Self {
            eps: 0.0,
            ..Self::new(c)
        }
    }

    pub fn forward(&self, xs: &[Tensor3], mode: Mode) -> Result<(Vec<Tensor3>, BnCache)> {
        check_channels("BatchNorm", xs, self.c)?;
        let c = self.c;
        let (mean, var) = match mode {
            Mode::Inference => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut count = 0usize;
                for x in xs {
                    for p in x.data().chunks_exact(c) {
                        for (m, v) in mean.iter_mut().zip(p) {
                            *m += v;
                        }
                    }
                    count += x.h() * x.w();
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for x in xs {
                    for p in x.data().chunks_exact(c) {
                        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xh = x.clone();
            let mut y = x.clone();
            for (xp, yp) in xh
                .data_mut()
                .chunks_exact_mut(c)
                .zip(y.data_mut().chunks_exact_mut(c))
            {
                for k in 0..c {
                    xp[k] = (xp[k] - mean[k]) * inv_std[k];
                    yp[k] = self.gamma.value[k] * xp[k] + self.beta.value[k];
                }
            }
            xhat.push(xh);
            ys.push(y);
        }
        Ok((
            ys,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Accumulates `gamma`/`beta` gradients and, for training-mode caches,
    /// folds the batch statistics into the running estimates.
    pub fn backward(&mut self, cache: &BnCache, dys: &[Tensor3]) -> Result<Vec<Tensor3>> {
        if dys.len() != cache.xhat.len() {
            return shape_err("BatchNorm::backward", "batch size");
        }
        let c = self.c;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        let mut count = 0usize;
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            if dy.shape() != xh.shape() {
                return shape_err("BatchNorm::backward", "upstream shape");
            }
            for (g, x) in dy.data().chunks_exact(c).zip(xh.data().chunks_exact(c)) {
                for k in 0..c {
                    sum_dy[k] += g[k];
                    sum_dy_xhat[k] += g[k] * x[k];
                }
            }
            count += dy.h() * dy.w();
        }
        for k in 0..c {
            self.gamma.grad[k] += sum_dy_xhat[k];
            self.beta.grad[k] += sum_dy[k];
        }
        let n = count as f64;
        let mut dxs = Vec::with_capacity(dys.len());
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            let mut dx = dy.clone();
            for (g, x) in dx.data_mut().chunks_exact_mut(c).zip(xh.data().chunks_exact(c)) {
                for k in 0..c {
                    let gi = self.gamma.value[k] * cache.inv_std[k];
                    g[k] = match cache.mode {
                        Mode::Inference => gi * g[k],
                        Mode::Train => {
                            gi * (g[k] - sum_dy[k] / n - x[k] * sum_dy_xhat[k] / n)
                        }
                    };
                }
            }
            dxs.push(dx);
        }
        if cache.mode == Mode::Train {
            let unbias = if count > 1 { n / (n - 1.0) } else { 1.0 };
            for k in 0..c {
                self.running_mean[k] += self.momentum * (cache.batch_mean[k] - self.running_mean[k]);
                self.running_var[k] +=
                    self.momentum * (cache.batch_var[k] * unbias - self.running_var[k]);
            }
        }
        Ok(dxs)
    }
}

pub fn relu6(x: f64) -> f64 {
    x.clamp(0.0, 6.0)
}

/// Passes the gradient where the pre-activation lies strictly inside (0, 6).
pub fn relu6_backward(pre: &Tensor3, dy: &Tensor3) -> Result<Tensor3> {
    if pre.shape() != dy.shape() {
        return shape_err("relu6_backward", "upstream shape");
    }
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&x, &g)| if x > 0.0 && x < 6.0 { g } else { 0.0 })
        .collect();
    Tensor3::new(pre.h(), pre.w(), pre.c(), data)
}

/// Per-channel spatial mean.
pub fn global_avg_pool(x: &Tensor3) -> Vec<f64> {
    let c = x.c();
    let mut out = vec![0.0; c];
    for p in x.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let n = (x.h() * x.w()) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub fn global_avg_pool_backward(g: &[f64], h: usize, w: usize) -> Tensor3 {
    let n = (h * w) as f64;
    Tensor3::from_fn(h, w, g.len(), |_, _, k| g[k] / n)
}

/// Fully connected layer with bias. Weight layout is `cout x cin`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: Param::xavier(rng, cin * cout, cin, cout),
            bias: Param::filled(cout, 0.0),
        }
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cin {
            return shape_err("Linear", format!("expected {} inputs, got {}", self.cin, x.len()));
        }
        Ok((0..self.cout)
            .map(|o| {
                let row = &self.weight.value[o * self.cin..(o + 1) * self.cin];
                self.bias.value[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }

    pub fn backward_one(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cin || dy.len() != self.cout {
            return shape_err("Linear::backward", "shape");
        }
        let mut dx = vec![0.0; self.cin];
        for (o, &g) in dy.iter().enumerate() {
            self.bias.grad[o] += g;
            for i in 0..self.cin {
                self.weight.grad[o * self.cin + i] += g * x[i];
                dx[i] += g * self.weight.value[o * self.cin + i];
            }
        }
        Ok(dx)
    }
}

/// The convolution inside a [`ConvUnit`].
#[derive(Debug, Clone)]
pub enum Conv {
    Full(Conv3x3),
    Pointwise(Conv1x1),
    Depthwise(DepthwiseConv3x3),
}

impl Conv {
    pub fn forward_one(&self, x: &Tensor3) -> Result<Tensor3> {
        match self {
            Conv::Full(c) => c.forward_one(x),
            Conv::Pointwise(c) => c.forward_one(x),
            Conv::Depthwise(c) => c.forward_one(x),
        }
    }

    pub fn backward_one(&mut self, x: &Tensor3, dy: &Tensor3) -> Result<Tensor3> {
        match self {
            Conv::Full(c) => c.backward_one(x, dy),
            Conv::Pointwise(c) => c.backward_one(x, dy),
            Conv::Depthwise(c) => c.backward_one(x, dy),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Conv::Full(c) => c.cout,
            Conv::Pointwise(c) => c.cout,
            Conv::Depthwise(c) => c.c,
        }
    }

    pub fn weight(&self) -> &Param {
        match self {
            Conv::Full(c) => &c.weight,
            Conv::Pointwise(c) => &c.weight,
            Conv::Depthwise(c) => &c.weight,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Param {
        match self {
            Conv::Full(c) => &mut c.weight,
            Conv::Pointwise(c) => &mut c.weight,
            Conv::Depthwise(c) => &mut c.weight,
        }
    }
}

/// Convolution → batch norm → optional clipped-linear activation.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: bool,
}

#[derive(Debug, Clone)]
pub struct ConvUnitCache {
    input: Vec<Tensor3>,
    bn: BnCache,
    pre_act: Vec<Tensor3>,
}

impl ConvUnit {
    pub fn new(conv: Conv, act: bool) -> Self {
        let c = conv.out_channels();
        Self {
            conv,
            bn: BatchNorm::new(c),
            act,
        }
    }

    pub fn forward(&self, xs: &[Tensor3], mode: Mode) -> Result<(Vec<Tensor3>, ConvUnitCache)> {
        let conv_out = xs
            .iter()
            .map(|x| self.conv.forward_one(x))
            .collect::<Result<Vec<_>>>()?;
        let (pre_act, bn) = self.bn.forward(&conv_out, mode)?;
        let out = if self.act {
            pre_act.iter().map(|t| t.map(relu6)).collect()
        } else {
            pre_act.clone()
        };
        Ok((
            out,
            ConvUnitCache {
                input: xs.to_vec(),
                bn,
                pre_act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvUnitCache, dys: &[Tensor3]) -> Result<Vec<Tensor3>> {
        let d_pre = if self.act {
            cache
                .pre_act
                .iter()
                .zip(dys)
                .map(|(p, g)| relu6_backward(p, g))
                .collect::<Result<Vec<_>>>()?
        } else {
            dys.to_vec()
        };
        let d_conv = self.bn.backward(&cache.bn, &d_pre)?;
        cache
            .input
            .iter()
            .zip(&d_conv)
            .map(|(x, g)| self.conv.backward_one(x, g))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![self.conv.weight_mut(), &mut self.bn.gamma, &mut self.bn.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![self.conv.weight(), &self.bn.gamma, &self.bn.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_tensor};

    #[test]
    fn conv_output_sizes() {
        assert_eq!(conv3x3_out(224, 2), 112);
        assert_eq!(conv3x3_out(7, 2), 4);
        assert_eq!(conv3x3_out(28, 2), 14);
        assert_eq!(conv3x3_out(5, 1), 5);
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = seeded(1);
        let mut conv = Conv1x1::new(&mut rng, 3, 3);
        conv.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = uniform_tensor(&mut rng, 4, 5, 3, -1.0, 1.0);
        assert_eq!(conv.forward_one(&x).unwrap(), x);
    }

    #[test]
    fn depthwise_center_tap_is_identity() {
        let mut rng = seeded(2);
        let mut conv = DepthwiseConv3x3::new(&mut rng, 2, 1);
        conv.weight.value = vec![0.0; 18];
        conv.weight.value[4 * 2] = 1.0;
        conv.weight.value[4 * 2 + 1] = 1.0;
        let x = uniform_tensor(&mut rng, 3, 4, 2, -1.0, 1.0);
        assert_eq!(conv.forward_one(&x).unwrap(), x);
    }

    #[test]
    fn batchnorm_identity_and_train_stats() {
        let mut rng = seeded(3);
        let xs = vec![
            uniform_tensor(&mut rng, 2, 3, 2, -1.0, 1.0),
            uniform_tensor(&mut rng, 2, 3, 2, 2.0, 5.0),
        ];
        let bn = BatchNorm::identity(2);
        let (ys, _) = bn.forward(&xs, Mode::Inference).unwrap();
        assert_eq!(ys, xs);
        let (ys, _) = BatchNorm::new(2).forward(&xs, Mode::Train).unwrap();
        for k in 0..2 {
            let vals: Vec<f64> = ys.iter().flat_map(|y| y.data().iter().skip(k).step_by(2).copied()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = seeded(4);
        let conv = Conv1x1::new(&mut rng, 3, 2);
        assert!(conv.forward_one(&Tensor3::zeros(2, 2, 4)).is_err());
        assert!(BatchNorm::new(3).forward(&[Tensor3::zeros(1, 1, 2)], Mode::Train).is_err());
    }
}
