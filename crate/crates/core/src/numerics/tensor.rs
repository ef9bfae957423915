use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// 1-D tensor. Panics on an empty slice.
    pub fn vector(v: &[f64]) -> Self {
        assert!(!v.is_empty(), "empty vector tensor");
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    /// Single-row matrix `1 × n`.
    pub fn row(v: &[f64]) -> Self {
        assert!(!v.is_empty(), "empty row tensor");
        Self {
            shape: vec![1, v.len()],
            data: v.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` view: rank-1 tensors are treated as a single row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let cols = *self.shape.last().unwrap();
        self.data[r * cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Index of the first NaN or infinite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self
            .dims2()
            .ok_or_else(|| Error::shape("transpose", format!("rank {}", self.rank())))?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = match self.shape.as_slice() {
            [m, k] => (*m, *k),
            s => return Err(Error::shape("matmul", format!("lhs must be rank 2, got {s:?}"))),
        };
        let (k2, n) = match other.shape.as_slice() {
            [k2, n] => (*k2, *n),
            s => return Err(Error::shape("matmul", format!("rhs must be rank 2, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self::new(vec![m, n], out)
    }
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mish_scalar(x: f64) -> f64 {
    x * softplus_scalar(x).tanh()
}

pub fn mish_grad_scalar(x: f64) -> f64 {
    let t = softplus_scalar(x).tanh();
    t + x * (1.0 - t * t) * sigmoid_scalar(x)
}

/// Elementwise Mish, `x · tanh(softplus(x))`.
pub fn mish(x: &Tensor) -> Result<Tensor> {
    x.check_finite("mish")?;
    Ok(x.map(mish_scalar))
}

pub fn softplus(x: &Tensor) -> Result<Tensor> {
    x.check_finite("softplus")?;
    Ok(x.map(softplus_scalar))
}

/// Max-subtracted softmax along `axis` (0 or 1 for matrices, 0 for vectors).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    reduce_lanes(x, axis, "softmax", |lane| {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lane.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    })
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    reduce_lanes(x, axis, "log_softmax", |lane| {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lane.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        lane.iter().map(|&v| v - lse).collect()
    })
}

/// Applies `f` to every lane along `axis`, writing the result back in place.
pub(crate) fn reduce_lanes(
    x: &Tensor,
    axis: usize,
    op: &'static str,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Tensor> {
    x.check_finite(op)?;
    let (lanes, lane_len, stride) = lane_layout(x, axis, op)?;
    let mut out = x.clone();
    let mut buf = vec![0.0; lane_len];
    for l in 0..lanes {
        let base = lane_base(l, x, axis);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = x.data[base + i * stride];
        }
        let res = f(&buf);
        for (i, v) in res.into_iter().enumerate() {
            out.data[base + i * stride] = v;
        }
    }
    Ok(out)
}

/// `(lane count, lane length, element stride within a lane)` for a rank ≤ 2 tensor.
pub(crate) fn lane_layout(x: &Tensor, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    match (x.shape.as_slice(), axis) {
        ([n], 0) => Ok((1, *n, 1)),
        ([r, c], 0) => Ok((*c, *r, *c)),
        ([r, c], 1) => Ok((*r, *c, 1)),
        (s, a) => Err(Error::shape(op, format!("axis {a} invalid for shape {s:?}"))),
    }
}

pub(crate) fn lane_base(lane: usize, x: &Tensor, axis: usize) -> usize {
    match (x.shape.as_slice(), axis) {
        ([_], _) => 0,
        ([_, _], 0) => lane,
        ([_, c], _) => lane * c,
        _ => unreachable!(),
    }
}
