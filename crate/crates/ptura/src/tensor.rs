//! Dense complex multiway arrays and the CP algebra built on them.
//!
//! Layout convention: entries are stored with the first index varying
//! fastest. Mode-`n` unfolding keeps that ordering for the column index
//! (earlier modes vary fastest), which makes
//! `unfold(kruskal([A1..AN]), n) = A_n * khatri_rao([A_N .. skip n .. A_1])^T`
//! hold exactly. Every CP-related identity in this crate relies on that
//! pairing.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> DenseTensor {
        let len = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![Complex64::default(); len],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<Complex64>) -> Result<DenseTensor> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape volume {}",
                data.len(),
                len
            )));
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear index of a multi-index, first index fastest.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        let mut stride = 1;
        for (i, &extent) in idx.iter().zip(&self.shape) {
            lin += i * stride;
            stride *= extent;
        }
        lin
    }

    pub fn mean(&self) -> Complex64 {
        if self.data.is_empty() {
            return Complex64::default();
        }
        self.data.iter().sum::<Complex64>() / self.data.len() as f64
    }
}

/// Sum of K rank-1 outer products of the factor columns.
pub fn kruskal(factors: &[&CMat]) -> Result<DenseTensor> {
    let k = factors.first().map(|f| f.ncols()).unwrap_or(0);
    if factors.iter().any(|f| f.ncols() != k) {
        return Err(Error::Shape("factor column counts differ".into()));
    }
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let mut out = DenseTensor::zeros(&shape);
    if k == 0 || out.is_empty() {
        return Ok(out);
    }
    // Peel off the first mode: for each combination of the remaining
    // indices, accumulate a scaled copy of the first factor's columns.
    let n0 = shape[0];
    let rest: usize = shape[1..].iter().product();
    let mut coeff = vec![Complex64::default(); k];
    for j in 0..rest {
        for (c, item) in coeff.iter_mut().enumerate() {
            let mut rem = j;
            let mut prod = Complex64::new(1.0, 0.0);
            for (mode, &extent) in shape[1..].iter().enumerate() {
                let idx = rem % extent;
                rem /= extent;
                prod *= factors[mode + 1][(idx, c)];
            }
            *item = prod;
        }
        let block = &mut out.data[j * n0..(j + 1) * n0];
        for (c, &w) in coeff.iter().enumerate() {
            if w != Complex64::default() {
                for (i, slot) in block.iter_mut().enumerate() {
                    *slot += factors[0][(i, c)] * w;
                }
            }
        }
    }
    Ok(out)
}

/// Mode-`mode` unfolding: rows index the chosen mode, columns run over the
/// remaining modes with earlier modes varying fastest.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<CMat> {
    let order = t.order();
    if mode >= order {
        return Err(Error::Mode { mode, order });
    }
    let rows = t.shape[mode];
    let cols = t.len() / rows.max(1);
    let inner: usize = t.shape[..mode].iter().product();
    let mut out = CMat::zeros(rows, cols);
    for (lin, &v) in t.data.iter().enumerate() {
        let r = (lin / inner) % rows;
        let c = lin % inner + (lin / (inner * rows)) * inner;
        out[(r, c)] = v;
    }
    Ok(out)
}

/// Inverse of `unfold`.
pub fn fold(m: &CMat, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let order = shape.len();
    if mode >= order {
        return Err(Error::Mode { mode, order });
    }
    let rows = shape[mode];
    let len: usize = shape.iter().product();
    if m.nrows() != rows || m.nrows() * m.ncols() != len {
        return Err(Error::Shape("matrix does not match target shape".into()));
    }
    let inner: usize = shape[..mode].iter().product();
    let mut data = vec![Complex64::default(); len];
    for (lin, slot) in data.iter_mut().enumerate() {
        let r = (lin / inner) % rows;
        let c = lin % inner + (lin / (inner * rows)) * inner;
        *slot = m[(r, c)];
    }
    DenseTensor::from_data(shape, data)
}

/// Column-wise Kronecker product in the given order; for each column the
/// last matrix in the list varies fastest along the output rows.
pub fn khatri_rao(mats: &[&CMat]) -> Result<CMat> {
    let k = mats.first().map(|m| m.ncols()).unwrap_or(0);
    if mats.iter().any(|m| m.ncols() != k) {
        return Err(Error::Shape("column counts differ".into()));
    }
    let rows: usize = mats.iter().map(|m| m.nrows()).product();
    let mut out = CMat::zeros(rows, k);
    for c in 0..k {
        for r in 0..rows {
            let mut rem = r;
            let mut prod = Complex64::new(1.0, 0.0);
            for m in mats.iter().rev() {
                let idx = rem % m.nrows();
                rem /= m.nrows();
                prod *= m[(idx, c)];
            }
            out[(r, c)] = prod;
        }
    }
    Ok(out)
}

/// Inner product conjugating the first argument.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<Complex64> {
    if a.shape != b.shape {
        return Err(Error::Shape("tensor shapes differ".into()));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

pub fn fro_norm2(a: &DenseTensor) -> f64 {
    a.data.iter().map(|v| v.norm_sqr()).sum()
}
