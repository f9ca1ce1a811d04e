//! Brute-force references written directly from per-pixel definitions.
#![allow(dead_code)]

use kron_attn::Tensor3;

/// Softmax-weighted sum of `values` (after `wv`) for one query.
fn attend(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], wv: Option<&[Vec<f64>]>) -> Vec<f64> {
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(query).map(|(a, b)| a * b).sum())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let c = values[0].len();
    let out_c = wv.map_or(c, |w| w.len());
    let mut out = vec![0.0; out_c];
    for (v, ei) in values.iter().zip(&e) {
        let tv: Vec<f64> = match wv {
            Some(w) => w.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect(),
            None => v.clone(),
        };
        for k in 0..out_c {
            out[k] += ei / z * tv[k];
        }
    }
    out
}

fn pixels(t: &Tensor3) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..t.h() {
        for j in 0..t.w() {
            out.push((0..t.c()).map(|k| t.get(i, j, k)).collect());
        }
    }
    out
}

fn from_pixels(h: usize, w: usize, px: &[Vec<f64>]) -> Tensor3 {
    Tensor3::from_fn(h, w, px[0].len(), |i, j, k| px[i * w + j][k])
}

/// Column means over height (one vector per width position) followed by
/// row means over width (one per height position).
pub fn context_vectors(t: &Tensor3) -> Vec<Vec<f64>> {
    let (h, w, c) = t.shape();
    let mut out = Vec::new();
    for j in 0..w {
        out.push((0..c).map(|k| (0..h).map(|i| t.get(i, j, k)).sum::<f64>() / h as f64).collect());
    }
    for i in 0..h {
        out.push((0..c).map(|k| (0..w).map(|j| t.get(i, j, k)).sum::<f64>() / w as f64).collect());
    }
    out
}

pub fn pooled_pixels(t: &Tensor3) -> Vec<Vec<f64>> {
    let (h, w, c) = t.shape();
    let mut out = Vec::new();
    for bi in 0..h.div_ceil(2) {
        for bj in 0..w.div_ceil(2) {
            let mut acc = vec![0.0; c];
            let mut n = 0.0;
            for i in 2 * bi..(2 * bi + 2).min(h) {
                for j in 2 * bj..(2 * bj + 2).min(w) {
                    for k in 0..c {
                        acc[k] += t.get(i, j, k);
                    }
                    n += 1.0;
                }
            }
            out.push(acc.into_iter().map(|a| a / n).collect());
        }
    }
    out
}

pub fn nonlocal(t: &Tensor3, wv: Option<&[Vec<f64>]>) -> Tensor3 {
    let px = pixels(t);
    let out: Vec<Vec<f64>> = px.iter().map(|q| attend(q, &px, &px, wv)).collect();
    from_pixels(t.h(), t.w(), &out)
}

pub fn pooled(t: &Tensor3, wv: Option<&[Vec<f64>]>) -> Tensor3 {
    let px = pixels(t);
    let kv = pooled_pixels(t);
    let out: Vec<Vec<f64>> = px.iter().map(|q| attend(q, &kv, &kv, wv)).collect();
    from_pixels(t.h(), t.w(), &out)
}

pub fn kao_kv(t: &Tensor3, wv: Option<&[Vec<f64>]>) -> Tensor3 {
    let px = pixels(t);
    let ctx = context_vectors(t);
    let out: Vec<Vec<f64>> = px.iter().map(|q| attend(q, &ctx, &ctx, wv)).collect();
    from_pixels(t.h(), t.w(), &out)
}

pub fn kao_qkv(t: &Tensor3, wv: Option<&[Vec<f64>]>) -> Tensor3 {
    let (h, w, _) = t.shape();
    let ctx = context_vectors(t);
    let o: Vec<Vec<f64>> = ctx.iter().map(|q| attend(q, &ctx, &ctx, wv)).collect();
    let oc = o[0].len();
    Tensor3::from_fn(h, w, oc, |i, j, k| o[w + i][k] + o[j][k])
}

/// Same-padded 3x3 convolution from explicit loops; `weight(o, di, dj, i)`.
pub fn conv3x3(x: &Tensor3, cout: usize, stride: usize, weight: impl Fn(usize, usize, usize, usize) -> f64) -> Tensor3 {
    let (h, w, cin) = x.shape();
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    Tensor3::from_fn(ho, wo, cout, |oi, oj, o| {
        let mut s = 0.0;
        for di in 0..3 {
            for dj in 0..3 {
                let i = (oi * stride + di) as isize - 1;
                let j = (oj * stride + dj) as isize - 1;
                if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                    continue;
                }
                for ci in 0..cin {
                    s += weight(o, di, dj, ci) * x.get(i as usize, j as usize, ci);
                }
            }
        }
        s
    })
}

pub fn depthwise3x3(x: &Tensor3, stride: usize, weight: impl Fn(usize, usize, usize) -> f64) -> Tensor3 {
    let c = x.c();
    let (h, w) = (x.h(), x.w());
    Tensor3::from_fn(h.div_ceil(stride), w.div_ceil(stride), c, |oi, oj, ch| {
        let mut s = 0.0;
        for di in 0..3 {
            for dj in 0..3 {
                let i = (oi * stride + di) as isize - 1;
                let j = (oj * stride + dj) as isize - 1;
                if i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w {
                    s += weight(di, dj, ch) * x.get(i as usize, j as usize, ch);
                }
            }
        }
        s
    })
}

pub fn pointwise(x: &Tensor3, cout: usize, weight: impl Fn(usize, usize) -> f64) -> Tensor3 {
    Tensor3::from_fn(x.h(), x.w(), cout, |i, j, o| (0..x.c()).map(|k| weight(o, k) * x.get(i, j, k)).sum())
}

pub fn bn_inference(x: &Tensor3, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor3 {
    Tensor3::from_fn(x.h(), x.w(), x.c(), |i, j, k| {
        gamma[k] * (x.get(i, j, k) - mean[k]) / (var[k] + eps).sqrt() + beta[k]
    })
}

pub fn relu6(x: &Tensor3) -> Tensor3 {
    x.map(|v| v.clamp(0.0, 6.0))
}

pub fn concat(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    Tensor3::from_fn(a.h(), a.w(), a.c() + b.c(), |i, j, k| {
        if k < a.c() { a.get(i, j, k) } else { b.get(i, j, k - a.c()) }
    })
}

pub fn avg_pool2(x: &Tensor3) -> Tensor3 {
    let (ho, wo) = (x.h().div_ceil(2), x.w().div_ceil(2));
    let px = pooled_pixels(x);
    Tensor3::from_fn(ho, wo, x.c(), |i, j, k| px[i * wo + j][k])
}

pub fn max_abs_diff(a: &Tensor3, b: &Tensor3) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use kron_attn::attention::AttentionKind;
use kron_attn::nn::{Conv, ConvUnit, Module, ModuleKind};

fn unit_oracle(u: &ConvUnit, x: &Tensor3) -> Tensor3 {
    let y = match &u.conv {
        Conv::Full(c) => {
            let cin = c.cin;
            conv3x3(x, c.cout, c.stride, |o, di, dj, i| c.weight.value[((o * 3 + di) * 3 + dj) * cin + i])
        }
        Conv::Pointwise(c) => pointwise(x, c.cout, |o, i| c.weight.value[o * c.cin + i]),
        Conv::Depthwise(c) => depthwise3x3(x, c.stride, |di, dj, ch| c.weight.value[(di * 3 + dj) * c.c + ch]),
    };
    let bn = &u.bn;
    let y = bn_inference(&y, &bn.gamma.value, &bn.beta.value, &bn.running_mean, &bn.running_var, bn.eps);
    if u.act { relu6(&y) } else { y }
}

pub fn attention_oracle(kind: AttentionKind, x: &Tensor3, wv: Option<&[Vec<f64>]>) -> Tensor3 {
    match kind {
        AttentionKind::Regular => nonlocal(x, wv),
        AttentionKind::Pooled => pooled(x, wv),
        AttentionKind::KaoKv => kao_kv(x, wv),
        AttentionKind::KaoQkv => kao_qkv(x, wv),
    }
}

/// Inference-mode module forward composed from the reference layers.
pub fn module_oracle(m: &Module, x: &Tensor3) -> Tensor3 {
    let s = m.spec;
    let expanded = m.expand.as_ref().map(|u| unit_oracle(u, x));
    let proj_in = match s.kind {
        ModuleKind::Base | ModuleKind::BaseSkip => {
            let a = match (expanded, s.kind == ModuleKind::BaseSkip && s.s == 1) {
                (Some(e), true) => concat(&e, x),
                (Some(e), false) => e,
                (None, _) => x.clone(),
            };
            unit_oracle(m.depthwise.as_ref().unwrap(), &a)
        }
        ModuleKind::Attn | ModuleKind::AttnSkip => {
            let path = m.attention.as_ref().unwrap();
            let c = path.c;
            let wv: Vec<Vec<f64>> = (0..c).map(|o| path.wv.value[o * c..(o + 1) * c].to_vec()).collect();
            let mut z = attention_oracle(path.kind, x, Some(&wv));
            if s.kind == ModuleKind::AttnSkip && s.s == 1 {
                z = Tensor3::from_fn(z.h(), z.w(), z.c(), |i, j, k| z.get(i, j, k) + x.get(i, j, k));
            }
            if s.s == 2 {
                z = avg_pool2(&z);
            }
            match (&m.depthwise, expanded) {
                (Some(u), Some(e)) => concat(&unit_oracle(u, &e), &z),
                _ => z,
            }
        }
    };
    let y = unit_oracle(&m.project, &proj_in);
    if s.s == 1 && s.c_in == s.c_out {
        Tensor3::from_fn(y.h(), y.w(), y.c(), |i, j, k| y.get(i, j, k) + x.get(i, j, k))
    } else {
        y
    }
}
