//! Dual-pixel samples, dataset I/O, patching, augmentation and synthesis.

pub mod augment;
pub mod image;
pub mod io;
pub mod patches;
pub mod synth;

pub use augment::{augment, Transform};
pub use io::{
    load_dataset, png_stems, read_image, write_png, write_sample, BitDepth, DatasetStream, Split,
};
pub use patches::{extract_patches, PatchSpec};
pub use synth::{synth_dual_pixel, synthetic_sharp, DepthMap, DiskPsfs, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Left and right blurry views plus the sharp target, each `H×W×3` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPixelSample {
    pub id: String,
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl DualPixelSample {
    pub fn new(
        id: &str,
        left: Tensor<f32>,
        right: Tensor<f32>,
        target: Tensor<f32>,
    ) -> Result<Self> {
        image::dims3(&left, "sample")?;
        if left.shape() != right.shape() || left.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "sample",
                shapes: format!(
                    "`{id}`: left {:?}, right {:?}, target {:?}",
                    left.shape(),
                    right.shape(),
                    target.shape()
                ),
            });
        }
        Ok(Self {
            id: id.to_string(),
            left,
            right,
            target,
        })
    }

    /// `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        (self.left.shape()[0], self.left.shape()[1])
    }

    pub fn crop(
        &self,
        id: &str,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            id: id.to_string(),
            left: image::crop(&self.left, top, left, height, width)?,
            right: image::crop(&self.right, top, left, height, width)?,
            target: image::crop(&self.target, top, left, height, width)?,
        })
    }
}

/// Samples stacked into `B×H×W×3` tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl Batch {
    pub fn stack(samples: &[&DualPixelSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("batch", "cannot stack an empty batch"))?;
        if let Some(odd) = samples
            .iter()
            .find(|s| s.left.shape() != first.left.shape())
        {
            return Err(Error::ShapeMismatch {
                op: "batch",
                shapes: format!(
                    "`{}` is {:?}, `{}` is {:?}",
                    first.id,
                    first.left.shape(),
                    odd.id,
                    odd.left.shape()
                ),
            });
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(first.left.shape());
        let gather = |pick: fn(&DualPixelSample) -> &Tensor<f32>| {
            let data = samples
                .iter()
                .flat_map(|s| pick(s).data().iter().copied())
                .collect();
            Tensor::new(shape.clone(), data)
        };
        Ok(Self {
            left: gather(|s| &s.left)?,
            right: gather(|s| &s.right)?,
            target: gather(|s| &s.target)?,
        })
    }
}
