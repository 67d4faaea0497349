//! Dense row-major `f64` tensors.
//!
//! Activations use the axis convention `[N, K, F, H, W]` (batch, channels,
//! frames, height, width).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(shape_err!("tensor must have at least one axis"));
    }
    if let Some(bad) = shape.iter().find(|&&e| e == 0) {
        return Err(shape_err!("extent {bad} in {shape:?} must be >= 1"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_extents(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![value; len] })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_extents(shape)?;
        if len != data.len() {
            return Err(shape_err!("shape {shape:?} needs {len} elements, got {}", data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(shape_err!("index rank {} != tensor rank {}", index.len(), self.shape.len()));
        }
        let mut off = 0;
        for (axis, (&i, &e)) in index.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(shape_err!("index {i} out of bounds for axis {axis} of extent {e}"));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    pub fn unravel(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return Err(shape_err!("offset {offset} out of bounds for {} elements", self.data.len()));
        }
        let mut idx = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            idx[axis] = offset % self.shape[axis];
            offset /= self.shape[axis];
        }
        Ok(idx)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    /// Index of the largest element, first occurrence on ties.
    pub fn argmax(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        best
    }

    /// Channel-wise product of an `[N, K, ...]` tensor with a length-`K`
    /// vector: `out[n, k, ...] = a[n, k, ...] * v[k]`.
    pub fn broadcast_mul(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(shape_err!("broadcast_mul needs rank >= 2, got {:?}", self.shape));
        }
        let k = self.shape[1];
        if v.rank() != 1 || v.len() != k {
            return Err(shape_err!("channel vector {:?} does not match {k} channels", v.shape));
        }
        let inner: usize = self.shape[2..].iter().product();
        let mut out = self.clone();
        for (i, chunk) in out.data.chunks_mut(inner).enumerate() {
            let s = v.data[i % k];
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        Ok(out)
    }

    /// `[M, D] x [D, P] -> [M, P]`, each output accumulated in index order of `D`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || b.rank() != 2 {
            return Err(shape_err!("matmul needs rank-2 operands, got {:?} and {:?}", self.shape, b.shape));
        }
        let (m, d) = (self.shape[0], self.shape[1]);
        let (d2, p) = (b.shape[0], b.shape[1]);
        if d != d2 {
            return Err(shape_err!("matmul inner extents differ: {d} vs {d2}"));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let row = &self.data[i * d..(i + 1) * d];
            for j in 0..p {
                let mut acc = 0.0;
                for (t, &x) in row.iter().enumerate() {
                    acc += x * b.data[t * p + j];
                }
                out[i * p + j] = acc;
            }
        }
        Tensor::from_vec(&[m, p], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err!("transpose needs rank 2, got {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    /// Bit-level equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
