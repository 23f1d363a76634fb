//! Dense NCHW tensors and the FTNS on-disk format.
//!
//! FTNS layout, all little-endian with no padding:
//!
//! ```text
//! "FTNS"  u32 version (=1)  u32 B  u32 C  u32 H  u32 W  f32 * (B*C*H*W)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FTNS_MAGIC: &[u8; 4] = b"FTNS";
pub const FTNS_VERSION: u32 = 1;
pub const FTNS_HEADER_LEN: usize = 24;

/// Extents of a rank-4 tensor in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape4 { batch, channels, height, width };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!("all extents must be >= 1, got {self}")));
        }
        self.checked_numel()
            .ok_or_else(|| Error::Shape(format!("element count of {self} overflows usize")))?;
        Ok(())
    }

    fn checked_numel(&self) -> Option<usize> {
        self.batch
            .checked_mul(self.channels)?
            .checked_mul(self.height)?
            .checked_mul(self.width)
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Elements in one (H, W) plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.batch, self.channels, self.height, self.width)
    }
}

/// Row-major f32 tensor; W varies fastest, then H, C, B.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::Length { expected: shape.numel(), found: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor { data: vec![0.0; shape.numel()], shape })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(b, c, h, w)]
    }

    /// Contiguous (H, W) plane for one batch item and channel.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let start = self.shape.index(b, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise comparison, distinguishing +0.0 from -0.0.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_ftns_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FTNS_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FTNS_MAGIC);
        out.extend_from_slice(&FTNS_VERSION.to_le_bytes());
        for extent in self.shape.as_array() {
            let extent = u32::try_from(extent).expect("extent exceeds u32 range");
            out.extend_from_slice(&extent.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_ftns_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FTNS_HEADER_LEN {
            return Err(Error::Format(format!(
                "FTNS header needs {FTNS_HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != FTNS_MAGIC {
            return Err(Error::Format("bad magic, expected \"FTNS\"".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let version = word(1);
        if version != FTNS_VERSION {
            return Err(Error::Format(format!("unsupported FTNS version {version}")));
        }
        let shape = Shape4 {
            batch: word(2) as usize,
            channels: word(3) as usize,
            height: word(4) as usize,
            width: word(5) as usize,
        };
        shape.validate().map_err(|e| Error::Format(e.to_string()))?;
        let payload = &bytes[FTNS_HEADER_LEN..];
        if !payload.len().is_multiple_of(4) || payload.len() / 4 != shape.numel() {
            return Err(Error::Length { expected: shape.numel(), found: payload.len() / 4 });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at flat index {i}")));
        }
        Ok(Tensor { shape, data })
    }
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_ftns_bytes(&bytes)
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_ftns_bytes()).map_err(|e| Error::io(path, e))
}
