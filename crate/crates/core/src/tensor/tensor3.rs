use crate::error::{shape_err, Result};

use super::Matrix;

/// Dense `h x w x c` tensor of `f64`, channels fastest:
/// entry `(i, j, k)` lives at `data[(i * w + j) * c + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return shape_err("Tensor3::new", format!("empty shape {h}x{w}x{c}"));
        }
        if data.len() != h * w * c {
            return shape_err(
                "Tensor3::new",
                format!("{} values for a {h}x{w}x{c} tensor", data.len()),
            );
        }
        Ok(Self { h, w, c, data })
    }

    /// # Panics
    /// Panics on an empty shape.
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        assert!(h > 0 && w > 0 && c > 0, "tensor dimensions must be positive");
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f64) -> Self {
        let mut t = Self::zeros(h, w, c);
        t.data.fill(value);
        t
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(h, w, c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    t.data[(i * w + j) * c + k] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Stacks `h x w` frontal slices along the channel axis.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return shape_err("Tensor3::from_slices", "no slices");
        };
        let (h, w) = first.shape();
        if slices.iter().any(|s| s.shape() != (h, w)) {
            return shape_err("Tensor3::from_slices", "slices differ in shape");
        }
        Ok(Self::from_fn(h, w, slices.len(), |i, j, k| {
            slices[k].get(i, j)
        }))
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.w + j) * self.c + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.w + j) * self.c + k] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.w + j) * self.c + k] += v;
    }

    /// Channel vector at pixel `(i, j)`.
    pub fn fiber(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.c;
        &self.data[start..start + self.c]
    }

    /// The `k`-th frontal slice `X_::k` as an `h x w` matrix.
    pub fn frontal_slice(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.h, self.w, |i, j| self.get(i, j, k))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.shape() != other.shape() {
            return shape_err(
                "Tensor3::add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            );
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor3 {
            h: self.h,
            w: self.w,
            c: self.c,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(
                "Tensor3::add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            );
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenates along the channel axis: `[self, other]`.
    pub fn concat_channels(&self, other: &Tensor3) -> Result<Tensor3> {
        if (self.h, self.w) != (other.h, other.w) {
            return shape_err(
                "Tensor3::concat_channels",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            );
        }
        let c = self.c + other.c;
        let mut data = Vec::with_capacity(self.h * self.w * c);
        for p in 0..self.h * self.w {
            data.extend_from_slice(&self.data[p * self.c..(p + 1) * self.c]);
            data.extend_from_slice(&other.data[p * other.c..(p + 1) * other.c]);
        }
        Tensor3::new(self.h, self.w, c, data)
    }

    /// Splits channels into `[0, at)` and `[at, c)`.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor3, Tensor3)> {
        if at == 0 || at >= self.c {
            return shape_err(
                "Tensor3::split_channels",
                format!("split at {at} of {} channels", self.c),
            );
        }
        let a = Tensor3::from_fn(self.h, self.w, at, |i, j, k| self.get(i, j, k));
        let b = Tensor3::from_fn(self.h, self.w, self.c - at, |i, j, k| {
            self.get(i, j, at + k)
        });
        Ok((a, b))
    }
}
