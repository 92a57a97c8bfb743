//! Dense row-major `f32` matrices and the handful of kernels the forward pass
//! needs.
//!
//! Products accumulate in `f64`. For every output element the reduction runs
//! over the inner dimension in ascending order, independently of how many rows
//! the left operand has, so a batched product is bitwise equal to the
//! row-by-row products.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{})", self.rows, self.cols)
    }
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} tensor needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// A `1 x n` tensor holding `v`.
    pub fn row_vector(v: Vec<f32>) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v,
        }
    }

    /// Stack equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on 0; a zero-width tensor still has `rows` empty rows
        let cols = self.cols;
        (0..self.rows).map(move |i| &self.data[i * cols..(i + 1) * cols])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy the given rows into a new tensor, in the given order.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= self.rows {
                return Err(Error::arg(format!(
                    "row index {id} at position {pos} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(Self {
            rows: ids.len(),
            cols: self.cols,
            data,
        })
    }

    /// Copy the given columns into a new tensor, in the given order.
    pub fn gather_cols(&self, ids: &[usize]) -> Result<Self> {
        if let Some((pos, &bad)) = ids.iter().enumerate().find(|(_, &c)| c >= self.cols) {
            return Err(Error::arg(format!(
                "column index {bad} at position {pos} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * ids.len());
        for r in self.iter_rows() {
            data.extend(ids.iter().map(|&c| r[c]));
        }
        Ok(Self {
            rows: self.rows,
            cols: ids.len(),
            data,
        })
    }

    /// Add `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f32]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "bias of length {} against {}x{} tensor",
                bias.len(),
                self.rows,
                self.cols
            )));
        }
        let cols = self.cols;
        if cols == 0 {
            return Ok(());
        }
        for r in self.data.chunks_exact_mut(cols) {
            for (x, b) in r.iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
        Ok(())
    }

    /// Concatenate two tensors with equal row counts side by side.
    pub fn hconcat(&self, right: &Tensor2D) -> Result<Self> {
        if self.rows != right.rows {
            return Err(Error::shape(format!(
                "hconcat of {:?} and {:?}",
                self.shape(),
                right.shape()
            )));
        }
        let cols = self.cols + right.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(right.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// `a · b`.
pub fn gemm(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "gemm of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut acc = vec![0f64; m * n];
    if n > 0 {
        // k outermost: each row of b is streamed once and reused by all rows of a.
        for p in 0..k {
            let brow = &b.data[p * n..(p + 1) * n];
            for (i, out) in acc.chunks_exact_mut(n).enumerate() {
                let aip = a.data[i * k + p] as f64;
                for (c, &bv) in out.iter_mut().zip(brow) {
                    *c += aip * bv as f64;
                }
            }
        }
    }
    Ok(Tensor2D {
        rows: m,
        cols: n,
        data: acc.into_iter().map(|x| x as f32).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

pub fn activate(kind: Activation, t: &Tensor2D) -> Tensor2D {
    let mut out = t.clone();
    activate_in_place(kind, &mut out);
    out
}

pub fn activate_in_place(kind: Activation, t: &mut Tensor2D) {
    for x in t.data.iter_mut() {
        *x = kind.apply(*x);
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f32]) -> Result<Vec<f32>> {
    let mut out = row.to_vec();
    log_softmax_in_place(&mut out)?;
    Ok(out)
}

pub fn log_softmax_in_place(row: &mut [f32]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::arg("log_softmax of an empty row"));
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let sum: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
    let log_sum = sum.ln();
    for x in row.iter_mut() {
        *x = ((*x - max) as f64 - log_sum) as f32;
    }
    Ok(())
}

/// Column means.
pub fn mean_rows(t: &Tensor2D) -> Result<Vec<f32>> {
    if t.rows == 0 {
        return Err(Error::arg("mean_rows of a tensor with zero rows"));
    }
    let mut acc = vec![0f64; t.cols];
    for r in t.iter_rows() {
        for (a, &x) in acc.iter_mut().zip(r) {
            *a += x as f64;
        }
    }
    let n = t.rows as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}
