//! Pixel relevance masks and normalized depth maps.

use crate::error::{Error, Result};

/// Binary per-pixel relevance map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    relevant: Vec<bool>,
}

impl PixelMask {
    pub fn filled(height: usize, width: usize, relevant: bool) -> Result<Self> {
        check_dims(height, width)?;
        Ok(PixelMask { height, width, relevant: vec![relevant; height * width] })
    }

    pub fn from_vec(height: usize, width: usize, relevant: Vec<bool>) -> Result<Self> {
        check_dims(height, width)?;
        if relevant.len() != height * width {
            return Err(Error::Length { expected: height * width, found: relevant.len() });
        }
        Ok(PixelMask { height, width, relevant })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(height, width)?;
        let mut relevant = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                relevant.push(f(h, w));
            }
        }
        Ok(PixelMask { height, width, relevant })
    }

    /// Relevant inside the half-open rectangle `[top, top+h) x [left, left+w)`, clipped to the mask.
    pub fn rect(height: usize, width: usize, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Self::from_fn(height, width, |y, x| y >= top && y < top + h && x >= left && x < left + w)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> bool {
        self.relevant[h * self.width + w]
    }

    pub fn set(&mut self, h: usize, w: usize, relevant: bool) {
        self.relevant[h * self.width + w] = relevant;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.relevant
    }

    pub fn count_relevant(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }

    pub fn relevant_fraction(&self) -> f64 {
        self.count_relevant() as f64 / self.relevant.len() as f64
    }

    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.dims() == other.dims() && self.relevant.iter().zip(&other.relevant).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let relevant = self.relevant.iter().zip(&other.relevant).map(|(&a, &b)| a || b).collect();
        Ok(PixelMask { height: self.height, width: self.width, relevant })
    }

    /// Summed-area table with a zero border: entry `(h, w)` of the
    /// `(H+1) x (W+1)` table counts relevant pixels in `[0,h) x [0,w)`.
    pub(crate) fn integral(&self) -> Vec<u32> {
        let stride = self.width + 1;
        let mut table = vec![0u32; (self.height + 1) * stride];
        for h in 0..self.height {
            let mut row_sum = 0u32;
            for w in 0..self.width {
                row_sum += self.get(h, w) as u32;
                table[(h + 1) * stride + w + 1] = table[h * stride + w + 1] + row_sum;
            }
        }
        table
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("mask dims must be >= 1x1, got {height}x{width}")));
    }
    Ok(())
}

/// Per-pixel depth normalized to `[0, 1]`, 0 nearest.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::Length { expected: height * width, found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "depth value {} at index {i} outside [0,1]",
                values[i]
            )));
        }
        Ok(DepthMap { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                values.push(f(h, w));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
