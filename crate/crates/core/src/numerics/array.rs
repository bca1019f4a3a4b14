use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major array of `f64` values with an explicit shape.
///
/// Row-wise operations view any array as `rows × cols`, where `cols` is the
/// last extent and `rows` is the product of the leading extents. A rank-1
/// array of length `d` is therefore a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(DenseArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        DenseArray {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        DenseArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
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

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn rows(&self) -> usize {
        match self.cols() {
            0 => 0,
            c => self.data.len() / c,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn transpose(&self) -> Result<Self> {
        self.require_rank2("transpose")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::matrix(n, m, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.require_same_shape(other, "elementwise")?;
        Ok(DenseArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn require_rank2(&self, op: &str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{op} needs a rank-2 array, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.require_rank2("matmul")?;
    b.require_rank2("matmul")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents disagree: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    DenseArray::matrix(m, n, out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_bt(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.require_rank2("matmul_bt")?;
    b.require_rank2("matmul_bt")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_bt inner extents disagree: {m}x{k} by ({n}x{k2})ᵀ"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = dot(a_row, b_row);
        }
    }
    DenseArray::matrix(m, n, out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_at(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    a.require_rank2("matmul_at")?;
    b.require_rank2("matmul_at")?;
    let (k, m) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_at inner extents disagree: ({k}x{m})ᵀ by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a.data[p * m..(p + 1) * m];
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    DenseArray::matrix(m, n, out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let mu = mean(x);
    x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64
}

pub fn softmax_rows(a: &DenseArray) -> DenseArray {
    let cols = a.cols();
    let mut out = a.clone();
    if cols == 0 {
        return out;
    }
    for row in out.data.chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Layer normalization of a single vector with population variance.
pub fn layer_norm(
    x: &DenseArray,
    gain: &DenseArray,
    bias: &DenseArray,
    eps: f64,
) -> Result<DenseArray> {
    if x.shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "layer_norm expects a vector, got shape {:?}",
            x.shape
        )));
    }
    layer_norm_rows(x, gain, bias, eps)
}

/// Layer normalization applied independently to every row.
pub fn layer_norm_rows(
    x: &DenseArray,
    gain: &DenseArray,
    bias: &DenseArray,
    eps: f64,
) -> Result<DenseArray> {
    let d = x.cols();
    if d < 2 {
        return Err(Error::Degenerate(format!(
            "layer_norm needs at least 2 features, got {d}"
        )));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::Dimension(format!(
            "layer_norm gain/bias lengths {}/{} do not match width {d}",
            gain.len(),
            bias.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        let (mu, inv_std) = row_moments(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = gain.data[j] * (*v - mu) * inv_std + bias.data[j];
        }
    }
    Ok(out)
}

/// Mean and `1 / sqrt(var + eps)` of one row.
pub(crate) fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let mu = mean(row);
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
    (mu, 1.0 / libm::sqrt(var + eps))
}
