//! `TWLT` tensor files: a little-endian header followed by a row-major `f32`
//! payload.
//!
//! ```text
//! "TWLT" | u32 version = 1 | u32 rank | rank x u64 dims | f32 payload
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;
use topp_core::Matrix;

pub const MAGIC: [u8; 4] = *b"TWLT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic {0:?}, expected \"TWLT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    VersionMismatch(u32),
    #[error("truncated tensor file: need {expected} bytes, have {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("tensor dims {0:?} overflow the addressable size")]
    DimOverflow(Vec<u64>),
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(u64),
    #[error("expected a rank-{expected} tensor, found rank {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TensorError {
    /// Stable identifier for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            TensorError::BadMagic(_) => "bad_magic",
            TensorError::VersionMismatch(_) => "version_mismatch",
            TensorError::Truncated { .. } => "truncated",
            TensorError::DimOverflow(_) => "dim_overflow",
            TensorError::TrailingBytes(_) => "trailing_bytes",
            TensorError::RankMismatch { .. } => "rank_mismatch",
            TensorError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: Vec<f32>,
}

impl Tensor {
    /// Panics if `data` does not hold exactly `prod(dims)` values.
    pub fn new(dims: Vec<u64>, data: Vec<f32>) -> Self {
        let len = element_count(&dims).expect("tensor dims overflow");
        assert_eq!(len, data.len(), "payload does not match dims");
        Self { dims, data }
    }

    pub fn from_matrix(m: &Matrix<f32>) -> Self {
        Self::new(
            vec![m.rows() as u64, m.cols() as u64],
            m.as_slice().to_vec(),
        )
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TensorError::VersionMismatch(version));
        }
        let rank = r.u32()? as u64;
        r.need(rank.saturating_mul(8))?;
        let dims: Vec<u64> = (0..rank).map(|_| r.u64()).collect::<Result<_, _>>()?;
        let len = element_count(&dims).ok_or_else(|| TensorError::DimOverflow(dims.clone()))?;
        let payload = (len as u64)
            .checked_mul(4)
            .ok_or_else(|| TensorError::DimOverflow(dims.clone()))?;
        let raw = r.take(payload)?;
        if r.pos < bytes.len() {
            return Err(TensorError::TrailingBytes((bytes.len() - r.pos) as u64));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[u64]) -> Option<usize> {
    let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))?;
    let n = usize::try_from(n).ok()?;
    n.checked_mul(4)?;
    Some(n)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn need(&self, len: u64) -> Result<(), TensorError> {
        let have = (self.bytes.len() - self.pos) as u64;
        if len > have {
            return Err(TensorError::Truncated {
                expected: self.pos as u64 + len,
                found: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn take(&mut self, len: u64) -> Result<&'a [u8], TensorError> {
        self.need(len)?;
        let s = &self.bytes[self.pos..self.pos + len as usize];
        self.pos += len as usize;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), TensorError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&tensor.to_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorError> {
    Tensor::from_bytes(&fs::read(path)?)
}
