//! PRSM1 tensor files.
//!
//! Layout (little-endian):
//! - magic `PRSM` (4 bytes)
//! - version: u8 = 1
//! - dtype: u8 (0 = f32, 1 = f64, 2 = u8)
//! - ndim: u8
//! - dims: ndim × u32
//! - payload: product(dims) elements, row-major

use std::fs;
use std::path::Path;

use super::{BoolMatrix, Matrix, Real};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PRSM";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    /// Byte tensors, used for block masks.
    U8 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

/// A decoded file: header plus raw little-endian payload bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let ndim = u8::try_from(self.dims.len())
            .map_err(|_| Error::Format(format!("{} dims do not fit a u8", self.dims.len())))?;
        if self.payload.len() != self.numel() * self.dtype.size() {
            return Err(Error::Format(format!(
                "payload of {} bytes does not match dims {:?}",
                self.payload.len(),
                self.dims
            )));
        }
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype as u8);
        out.push(ndim);
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("dimension {d} does not fit a u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = bytes
            .get(..7)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        if header[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", header[4])));
        }
        let dtype = DType::from_code(header[5])?;
        let ndim = header[6] as usize;
        let dims_end = 7 + 4 * ndim;
        let dim_bytes = bytes
            .get(7..dims_end)
            .ok_or_else(|| Error::Format("truncated dims".into()))?;
        let dims: Vec<usize> = dim_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let want = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let payload = &bytes[dims_end..];
        if payload.len() != want {
            return Err(Error::Format(format!(
                "payload has {} bytes, dims {:?} need {want}",
                payload.len(),
                dims
            )));
        }
        Ok(Self {
            dtype,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn from_matrix<T: Real>(m: &Matrix<T>) -> Self {
        let mut payload = Vec::with_capacity(m.as_slice().len() * T::DTYPE.size());
        for &v in m.as_slice() {
            v.write_le(&mut payload);
        }
        Self {
            dtype: T::DTYPE,
            dims: vec![m.rows(), m.cols()],
            payload,
        }
    }

    pub fn from_bool_matrix(m: &BoolMatrix) -> Self {
        Self {
            dtype: DType::U8,
            dims: vec![m.rows(), m.cols()],
            payload: m.as_slice().iter().map(|&b| b as u8).collect(),
        }
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Format(format!(
                "expected a 2D tensor, found dims {:?}",
                self.dims
            ))),
        }
    }

    /// Converts a float tensor of either precision; rejects NaN and infinity.
    pub fn to_matrix<T: Real>(&self) -> Result<Matrix<T>> {
        let (rows, cols) = self.matrix_dims()?;
        let data: Vec<T> = match self.dtype {
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => self
                .payload
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::read_le(c)))
                .collect(),
            DType::U8 => {
                return Err(Error::Format(
                    "byte tensor where a float matrix was expected".into(),
                ))
            }
        };
        let m = Matrix::from_vec(rows, cols, data)?;
        m.ensure_finite()?;
        Ok(m)
    }

    /// Bytes must be 0 or 1.
    pub fn to_bool_matrix(&self) -> Result<BoolMatrix> {
        let (rows, cols) = self.matrix_dims()?;
        if self.dtype != DType::U8 {
            return Err(Error::Format("mask tensors must have dtype u8".into()));
        }
        let bits = self
            .payload
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        BoolMatrix::from_vec(rows, cols, bits)
    }
}

pub fn write_matrix<T: Real>(path: impl AsRef<Path>, m: &Matrix<T>) -> Result<()> {
    Tensor::from_matrix(m).write(path)
}

pub fn read_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    Tensor::read(path)?.to_matrix()
}
