use log::warn;

use crate::data::DualPixelSample;
use crate::error::{Error, Result};

/// Sliding-window crop geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: 560,
            stride: 140,
        }
    }
}

impl PatchSpec {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        let spec = Self { size, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.size {
            return Err(Error::Config(format!(
                "patch stride {} must be in 1..={}",
                self.stride, self.size
            )));
        }
        Ok(())
    }

    /// Number of fully contained windows along an axis of length `extent`.
    pub fn count_along(&self, extent: usize) -> usize {
        if extent < self.size {
            0
        } else {
            (extent - self.size) / self.stride + 1
        }
    }
}

/// Crops every fully contained `size×size` window with top-left corners on
/// the stride grid, applying the same window to all three views. Images
/// smaller than a patch give no patches.
pub fn extract_patches(sample: &DualPixelSample, spec: &PatchSpec) -> Result<Vec<DualPixelSample>> {
    spec.validate()?;
    let (h, w) = sample.size();
    let (rows, cols) = (spec.count_along(h), spec.count_along(w));
    if rows == 0 || cols == 0 {
        warn!(
            "sample `{}` ({h}×{w}) is smaller than the {}×{} patch; skipped",
            sample.id, spec.size, spec.size
        );
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let (top, left) = (i * spec.stride, j * spec.stride);
            out.push(sample.crop(
                &format!("{}_{top}_{left}", sample.id),
                top,
                left,
                spec.size,
                spec.size,
            )?);
        }
    }
    Ok(out)
}
