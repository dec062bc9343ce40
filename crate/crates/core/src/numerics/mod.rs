//! Dense row-major matrices and the handful of kernels the estimator needs.
//!
//! Every kernel computes each output row with the same serial code, so the
//! row-parallel evaluation used here is bitwise identical to a serial loop.

pub mod prsm;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Index, IndexMut};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};

pub use prsm::DType;

/// Floating point element type of a [`Matrix`]: `f64` is the reference
/// precision, `f32` the fast path.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Send + Sync + Debug + Display + Default + 'static
{
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` must be exactly `DTYPE.size()` long.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }
}

/// Dense 2D array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return shape_err(format!("row {i} has {} values, expected {cols}", r.len()));
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
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact on an empty slice with zero cols would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Fails on the first NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Gathers the listed columns, in the order given.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return shape_err(format!(
                "column {bad} out of range for {} columns",
                self.cols
            ));
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.row_iter() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Ok(Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        })
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return shape_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dense boolean matrix, used for softmax masks and block masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            bits: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn from_vec(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return shape_err(format!("{} bits cannot fill {rows}x{cols}", bits.len()));
        }
        Ok(Self { rows, cols, bits })
    }

    /// `true` on and below the diagonal.
    pub fn lower_triangular(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Dot product with four interleaved accumulators, in fixed order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Standard matrix product `a · b`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return shape_err(format!(
            "matmul of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(b.cols)
        .enumerate()
        .for_each(|(i, out_row)| {
            for (k, &aik) in a.row(i).iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                    *o = *o + aik * bkj;
                }
            }
        });
    Ok(out)
}

/// `a · bᵀ`, the shape of every attention logit computation.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return shape_err(format!(
            "a·bᵀ of {}x{} by ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    if b.rows == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(b.rows)
        .enumerate()
        .for_each(|(i, out_row)| {
            let ai = a.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(ai, b.row(j));
            }
        });
    Ok(out)
}

/// Softmax of one row in place, restricted to `keep` when given.
///
/// Returns `false` if no entry survives (all masked or all `-inf`).
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T], keep: Option<&[bool]>) -> bool {
    let kept = |j: usize| keep.map_or(true, |k| k[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if kept(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        *v = if kept(j) { (*v - max).exp() } else { T::zero() };
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
    true
}

/// Row-wise softmax with row-max subtraction. Masked entries (`false`)
/// come out as exactly zero.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>, mask: Option<&BoolMatrix>) -> Result<Matrix<T>> {
    if let Some(m) = mask {
        if m.shape() != logits.shape() {
            return shape_err(format!(
                "mask {:?} vs logits {:?}",
                m.shape(),
                logits.shape()
            ));
        }
    }
    let mut out = logits.clone();
    if out.cols == 0 {
        return match out.rows {
            0 => Ok(out),
            _ => Err(Error::FullyMasked { row: 0 }),
        };
    }
    let cols = out.cols;
    let failed = out
        .data
        .par_chunks_mut(cols)
        .enumerate()
        .filter_map(|(i, row)| {
            let keep = mask.map(|m| m.row(i));
            (!softmax_in_place(row, keep)).then_some(i)
        })
        .min();
    match failed {
        Some(row) => Err(Error::FullyMasked { row }),
        None => Ok(out),
    }
}

/// Root-mean-square over all entries: `sqrt((1/N) Σ_u ‖x_u‖² / d)`.
pub fn rms<T: Real>(x: &Matrix<T>) -> Result<f64> {
    if x.is_empty() {
        return shape_err("rms of an empty matrix");
    }
    let sum_sq: f64 = x
        .data
        .iter()
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum();
    Ok((sum_sq / x.data.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = lcg_matrix(2, 3, 1);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        let z = matmul(&a, &Matrix::zeros(3, 4)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
        assert!(matches!(
            matmul_nt(&a, &Matrix::zeros(2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matmul_nt_matches_transpose() {
        let a = lcg_matrix(5, 7, 2);
        let b = lcg_matrix(4, 7, 3);
        let via_t = matmul(&a, &b.transpose()).unwrap();
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(via_t.max_abs_diff(&nt).unwrap() < 1e-14);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap(), None).unwrap();
        for &v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let s = softmax_rows(&Matrix::from_rows(&[[1000.0, 0.0, 0.0]]).unwrap(), None).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(s[(0, 1)] < 1e-12);

        let logs = [1f64.ln(), 2f64.ln(), 3f64.ln()];
        let s = softmax_rows(&Matrix::from_rows(&[logs]).unwrap(), None).unwrap();
        for (j, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            assert!((s[(0, j)] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_mask_zeroes_and_renormalizes() {
        let logits = Matrix::from_rows(&[[1.0, 2.0, 3.0], [0.5, 0.5, 9.0]]).unwrap();
        let mask = BoolMatrix::lower_triangular(3);
        let mask = BoolMatrix::from_fn(2, 3, |i, j| mask.get(i + 1, j));
        let s = softmax_rows(&logits, Some(&mask)).unwrap();
        assert_eq!(s[(0, 2)], 0.0);
        assert!((s[(0, 0)] + s[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((s.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_fully_masked_row_is_error() {
        let logits = Matrix::<f64>::zeros(2, 2);
        let mask = BoolMatrix::from_vec(2, 2, vec![true, false, false, false]).unwrap();
        assert!(matches!(
            softmax_rows(&logits, Some(&mask)),
            Err(Error::FullyMasked { row: 1 })
        ));
    }

    #[test]
    fn softmax_f32_survives_sharp_logits() {
        let logits = Matrix::<f32>::from_rows(&[[300.0f32, 0.0, -300.0]]).unwrap();
        let s = softmax_rows(&logits, None).unwrap();
        assert!(s.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(s[(0, 0)], 1.0);
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&Matrix::from_fn(3, 4, |_, _| 1.0)).unwrap(), 1.0);
        assert_eq!(rms(&Matrix::<f64>::zeros(2, 2)).unwrap(), 0.0);
        let r = rms(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
        assert!((r - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!(matches!(
            rms(&Matrix::<f64>::zeros(0, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn select_cols_and_cast() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let s = a.select_cols(&[2, 0]).unwrap();
        assert_eq!(s.as_slice(), &[3.0, 1.0, 6.0, 4.0]);
        assert!(a.select_cols(&[3]).is_err());
        let f: Matrix<f32> = a.cast();
        assert_eq!(f.as_slice()[4], 5.0f32);
    }

    #[test]
    fn finite_check() {
        let mut a = Matrix::<f64>::zeros(2, 2);
        assert!(a.ensure_finite().is_ok());
        a[(1, 0)] = f64::NAN;
        assert!(matches!(
            a.ensure_finite(),
            Err(Error::NonFinite { index: 2 })
        ));
    }
}
