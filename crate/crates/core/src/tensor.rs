//! Dense row-major `f32` tensors and the `.ten` file format.
//!
//! Layout on disk (little-endian):
//!
//! ```text
//! "TEN0"            4 bytes magic
//! ndim              u8
//! extents           ndim x u32
//! payload           prod(extents) x f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TEN_MAGIC: &[u8; 4] = b"TEN0";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidDimension("tensor needs at least one axis".into()));
    }
    let mut n = 1usize;
    for (axis, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::InvalidDimension(format!("axis {axis} has zero extent")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidDimension(format!("extent product overflows at axis {axis}")))?;
    }
    Ok(n)
}

impl Tensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let dims = dims.into();
        let n = checked_len(&dims)?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let dims = dims.into();
        let n = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: vec![value; n],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical dims.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Serialize to the `.ten` byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidDimension(format!(
                "{} axes exceed the format limit of 255",
                self.dims.len()
            )));
        }
        let mut out = Vec::with_capacity(5 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TEN_MAGIC);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::InvalidDimension(format!("extent {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parse the `.ten` byte layout. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let err = |offset: usize, msg: &str| Error::format(origin, offset as u64, msg);
        if bytes.len() < 4 {
            return Err(err(bytes.len(), "truncated magic"));
        }
        if &bytes[..4] != TEN_MAGIC {
            return Err(err(0, "bad magic, expected \"TEN0\""));
        }
        let Some(&ndim) = bytes.get(4) else {
            return Err(err(4, "truncated header: missing ndim"));
        };
        if ndim == 0 {
            return Err(err(4, "ndim must be at least 1"));
        }
        let mut pos = 5usize;
        let mut dims = Vec::with_capacity(ndim as usize);
        let mut count = 1usize;
        for _ in 0..ndim {
            let raw = bytes.get(pos..pos + 4).ok_or_else(|| err(pos, "truncated extents"))?;
            let d = u32::from_le_bytes(raw.try_into().unwrap()) as usize;
            if d == 0 {
                return Err(err(pos, "zero extent"));
            }
            count = count
                .checked_mul(d)
                .filter(|c| c.checked_mul(4).is_some())
                .ok_or_else(|| err(pos, "extent product overflows"))?;
            dims.push(d);
            pos += 4;
        }
        let need = pos + 4 * count;
        if bytes.len() < need {
            return Err(err(bytes.len(), &format!("truncated payload, expected {need} bytes")));
        }
        if bytes.len() > need {
            return Err(err(need, "trailing bytes after payload"));
        }
        let data = bytes[pos..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}
