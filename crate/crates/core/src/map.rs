//! Masked single-channel maps and the tele-FoV rectangle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel `height × width` map with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

/// A [`DepthMap`] whose values are natural-log depths.
pub type LogDepthMap = DepthMap;

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if values.len() != n || mask.len() != n {
            return Err(Error::dim(format!(
                "{height}x{width} map needs {n} values and mask entries, got {} and {}",
                values.len(),
                mask.len()
            )));
        }
        Ok(DepthMap {
            height,
            width,
            values,
            mask,
        })
    }

    /// Map with every pixel valid.
    pub fn dense(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(height, width, values, vec![true; n])
    }

    pub fn full(height: usize, width: usize, value: f64) -> Self {
        DepthMap {
            height,
            width,
            values: vec![value; height * width],
            mask: vec![true; height * width],
        }
    }

    /// Builds a dense map from a `[1, H, W]` (or `[H, W]`) tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape()[..] {
            [1, h, w] | [h, w] => (h, w),
            _ => {
                return Err(Error::dim(format!(
                    "expected a single-channel map, got shape {:?}",
                    t.shape()
                )))
            }
        };
        Self::dense(h, w, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.values.clone()).expect("consistent dims")
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Elementwise AND of both masks; dims must agree.
    pub fn joint_mask(&self, other: &DepthMap) -> Result<Vec<bool>> {
        if self.dims() != other.dims() {
            return Err(Error::dim(format!(
                "map dims {:?} and {:?} differ",
                self.dims(),
                other.dims()
            )));
        }
        Ok(self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| a && b)
            .collect())
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::dim("mask length does not match map"));
        }
        self.mask = mask;
        Ok(self)
    }

    /// Applies `f` to every value, keeping the mask.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DepthMap {
        DepthMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn crop(&self, region: &TeleRegion) -> Result<DepthMap> {
        region.check_inside(self.height, self.width)?;
        let mut values = Vec::with_capacity(region.height * region.width);
        let mut mask = Vec::with_capacity(region.height * region.width);
        for y in region.y0..region.y0 + region.height {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row + region.x0..row + region.x0 + region.width]);
            mask.extend_from_slice(&self.mask[row + region.x0..row + region.x0 + region.width]);
        }
        DepthMap::new(region.height, region.width, values, mask)
    }
}

/// Tele-FoV rectangle inside the full-FoV frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeleRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl TeleRegion {
    pub fn check_inside(&self, frame_height: usize, frame_width: usize) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || self.x0 + self.width > frame_width
            || self.y0 + self.height > frame_height
        {
            return Err(Error::dim(format!(
                "region {self:?} does not fit a {frame_height}x{frame_width} frame"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.height && x >= self.x0 && x < self.x0 + self.width
    }
}
