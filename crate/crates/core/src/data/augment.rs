use crate::data::image::{flip_horizontal, flip_vertical, rotate90};
use crate::data::DualPixelSample;
use crate::rng::RngState;

/// One augmentation draw, applied identically to all views:
/// counter-clockwise rotation, then horizontal flip, then vertical flip.
///
/// A horizontal flip mirrors the half-aperture geometry, so it also swaps
/// the left and right views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    /// Draws a transform. Non-square images only get 0° or 180° turns so the
    /// shape is preserved.
    pub fn draw(rng: &mut RngState, square: bool) -> Self {
        let turns = rng.below(4) as u8;
        let quarter_turns = if square { turns } else { turns & 2 };
        Self {
            quarter_turns,
            flip_horizontal: rng.coin(),
            flip_vertical: rng.coin(),
        }
    }

    pub fn apply(&self, sample: &DualPixelSample) -> DualPixelSample {
        let mut views =
            [&sample.left, &sample.right, &sample.target].map(|v| rotate90(v, self.quarter_turns));
        if self.flip_horizontal {
            views = views.map(|v| flip_horizontal(&v));
            views.swap(0, 1);
        }
        if self.flip_vertical {
            views = views.map(|v| flip_vertical(&v));
        }
        let [left, right, target] = views;
        DualPixelSample {
            id: sample.id.clone(),
            left,
            right,
            target,
        }
    }
}

/// Draws a [`Transform`] from `rng` and applies it.
pub fn augment(sample: &DualPixelSample, rng: &mut RngState) -> DualPixelSample {
    let (h, w) = sample.size();
    Transform::draw(rng, h == w).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample() -> DualPixelSample {
        let l = Tensor::from_fn(vec![4, 4, 3], |i| i as f32 / 48.0).unwrap();
        let r = Tensor::from_fn(vec![4, 4, 3], |i| 1.0 - i as f32 / 48.0).unwrap();
        let t = Tensor::from_fn(vec![4, 4, 3], |i| (i % 5) as f32 / 5.0).unwrap();
        DualPixelSample::new("x", l, r, t).unwrap()
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        assert_eq!(Transform::IDENTITY.apply(&sample()), sample());
    }

    #[test]
    fn double_horizontal_flip_restores() {
        let t = Transform {
            flip_horizontal: true,
            ..Transform::IDENTITY
        };
        let once = t.apply(&sample());
        assert_eq!(once.left, flip_horizontal(&sample().right));
        assert_eq!(t.apply(&once), sample());
    }

    #[test]
    fn non_square_keeps_shape() {
        let t = Tensor::<f32>::zeros(vec![4, 6, 3]).unwrap();
        let s = DualPixelSample::new("n", t.clone(), t.clone(), t).unwrap();
        let mut rng = RngState::new(5);
        for _ in 0..32 {
            assert_eq!(augment(&s, &mut rng).size(), (4, 6));
        }
    }
}
