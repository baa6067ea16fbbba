//! Synthetic dual-pixel defocus.
//!
//! A defocused point spreads over a disk whose radius grows with distance
//! from the focal plane. A dual-pixel sensor splits the aperture, so the left
//! view sees the left half of the disk and the right view the right half;
//! averaging the two recovers the full-disk blur.

use crate::data::image::{dims3, reflect_index};
use crate::data::DualPixelSample;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Per-pixel blur strength in `[0, 1]`, scaled by the maximum radius.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthMap {
    Constant(f64),
    /// `H×W` (or `H×W×1`) field matching the image.
    Field(Tensor<f32>),
    /// A smooth random field drawn from the generator's stream.
    RandomSmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub max_blur_radius: f64,
    pub depth_map: DepthMap,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_blur_radius: 4.0,
            depth_map: DepthMap::RandomSmooth,
        }
    }
}

/// Normalized point spread functions of one integer radius, each stored as
/// a `(2r+1)²` row-major grid indexed by `(dy + r, dx + r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskPsfs {
    pub radius: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub full: Vec<f64>,
}

impl DiskPsfs {
    /// Disk `dx² + dy² ≤ r²`; the left half takes `dx < 0`, the right half
    /// `dx > 0`, and the centre column is shared with weight ½ each.
    pub fn new(radius: usize) -> Self {
        let r = radius as isize;
        let side = 2 * radius + 1;
        let mut left = vec![0.0; side * side];
        let mut right = vec![0.0; side * side];
        let mut full = vec![0.0; side * side];
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let i = ((dy + r) as usize) * side + (dx + r) as usize;
                full[i] = 1.0;
                match dx.signum() {
                    -1 => left[i] = 1.0,
                    1 => right[i] = 1.0,
                    _ => {
                        left[i] = 0.5;
                        right[i] = 0.5;
                    }
                }
            }
        }
        for kernel in [&mut left, &mut right, &mut full] {
            let total: f64 = kernel.iter().sum();
            kernel.iter_mut().for_each(|v| *v /= total);
        }
        Self {
            radius,
            left,
            right,
            full,
        }
    }
}

/// Convolution (the PSF is stamped, not correlated) with reflect padding.
pub fn blur_with_psf(img: &Tensor<f32>, psf: &[f64], radius: usize) -> Result<Tensor<f64>> {
    let (h, w, c) = dims3(img, "blur")?;
    let side = 2 * radius + 1;
    if psf.len() != side * side {
        return Err(Error::invalid(
            "blur",
            format!("psf has {} taps, expected {}", psf.len(), side * side),
        ));
    }
    let r = radius as isize;
    let src = img.data();
    let mut out = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dst = (y * w + x) * c;
            for dy in -r..=r {
                let sy = reflect_index(y as isize - dy, h);
                for dx in -r..=r {
                    let k = psf[((dy + r) as usize) * side + (dx + r) as usize];
                    if k == 0.0 {
                        continue;
                    }
                    let sx = reflect_index(x as isize - dx, w);
                    let s = (sy * w + sx) * c;
                    for ch in 0..c {
                        out[dst + ch] += k * f64::from(src[s + ch]);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Smooth depth field: a random plane plus a few Gaussian bumps, clamped to
/// `[0, 1]`.
pub fn random_depth(h: usize, w: usize, rng: &mut RngState) -> Tensor<f32> {
    let base = rng.uniform_range(0.0, 0.6);
    let gx = rng.uniform_range(-0.6, 0.6);
    let gy = rng.uniform_range(-0.6, 0.6);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform_range(0.0, h as f64),
                rng.uniform_range(0.0, w as f64),
                rng.uniform_range(0.1, 0.4) * h.min(w) as f64,
                rng.uniform_range(-0.5, 0.5),
            )
        })
        .collect();
    Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let mut d = base + gx * x / w as f64 + gy * y / h as f64;
        for &(cy, cx, s, a) in &bumps {
            d += a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp();
        }
        d.clamp(0.0, 1.0) as f32
    })
    .expect("non-empty image")
}

/// Blurs a sharp image into a left/right dual-pixel pair.
///
/// The per-pixel radius `max_blur_radius · depth` is split into the two
/// neighbouring integer radii and the corresponding half-disk blurs are
/// blended linearly.
pub fn synth_dual_pixel(
    id: &str,
    sharp: &Tensor<f32>,
    cfg: &SynthConfig,
    rng: &mut RngState,
) -> Result<DualPixelSample> {
    let (h, w, _) = dims3(sharp, "synth_dual_pixel")?;
    if !(cfg.max_blur_radius.is_finite() && cfg.max_blur_radius >= 0.0) {
        return Err(Error::Config(format!(
            "max_blur_radius must be finite and non-negative, got {}",
            cfg.max_blur_radius
        )));
    }
    let max_bin = cfg.max_blur_radius.ceil() as usize;
    if max_bin >= h.min(w) {
        return Err(Error::invalid(
            "synth_dual_pixel",
            format!(
                "blur radius {} exceeds the {h}×{w} image",
                cfg.max_blur_radius
            ),
        ));
    }
    let depth: Vec<f64> = match &cfg.depth_map {
        DepthMap::Constant(d) => vec![*d; h * w],
        DepthMap::RandomSmooth => random_depth(h, w, rng).to_f64_vec(),
        DepthMap::Field(t) => {
            if t.len() != h * w || t.shape()[..2] != [h, w] {
                return Err(Error::ShapeMismatch {
                    op: "synth_dual_pixel",
                    shapes: format!("depth {:?} vs image {h}×{w}", t.shape()),
                });
            }
            t.to_f64_vec()
        }
    };
    if depth.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::invalid(
            "synth_dual_pixel",
            "depth values must lie in [0, 1]",
        ));
    }
    let radii: Vec<f64> = depth.iter().map(|d| cfg.max_blur_radius * d).collect();

    let mut used = vec![false; max_bin + 1];
    for &r in &radii {
        used[r.floor() as usize] = true;
        used[(r.ceil() as usize).min(max_bin)] = true;
    }
    let mut bins: Vec<Option<(Tensor<f64>, Tensor<f64>)>> = Vec::with_capacity(max_bin + 1);
    for (radius, &needed) in used.iter().enumerate() {
        bins.push(if needed {
            let psf = DiskPsfs::new(radius);
            Some((
                blur_with_psf(sharp, &psf.left, radius)?,
                blur_with_psf(sharp, &psf.right, radius)?,
            ))
        } else {
            None
        });
    }

    let c = sharp.shape()[2];
    let mut left = vec![0.0f32; h * w * c];
    let mut right = vec![0.0f32; h * w * c];
    for (p, &r) in radii.iter().enumerate() {
        let lo = r.floor() as usize;
        let hi = (r.ceil() as usize).min(max_bin);
        let frac = r - lo as f64;
        let (lo_l, lo_r) = bins[lo].as_ref().expect("bin computed");
        let (hi_l, hi_r) = bins[hi].as_ref().expect("bin computed");
        for ch in 0..c {
            let i = p * c + ch;
            left[i] = ((1.0 - frac) * lo_l.data()[i] + frac * hi_l.data()[i]) as f32;
            right[i] = ((1.0 - frac) * lo_r.data()[i] + frac * hi_r.data()[i]) as f32;
        }
    }
    let shape = sharp.shape().to_vec();
    DualPixelSample::new(
        id,
        Tensor::new(shape.clone(), left)?,
        Tensor::new(shape, right)?,
        sharp.clone(),
    )
}

/// Procedural sharp test image: a colour gradient overlaid with rectangles,
/// disks and a stripe patch, all with hard edges.
pub fn synthetic_sharp(h: usize, w: usize, rng: &mut RngState) -> Tensor<f32> {
    let mut color = || [rng.uniform(), rng.uniform(), rng.uniform()];
    let (c0, c1) = (color(), color());
    let mut img = vec![0.0f64; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let t = (x + y) as f64 / (h + w).max(2) as f64;
            for ch in 0..3 {
                img[(y * w + x) * 3 + ch] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }
    let (hf, wf) = (h as f64, w as f64);
    let shapes = 4 + rng.below(4);
    for _ in 0..shapes {
        let col = [rng.uniform(), rng.uniform(), rng.uniform()];
        let cy = rng.uniform_range(0.0, hf);
        let cx = rng.uniform_range(0.0, wf);
        let sy = rng.uniform_range(0.1, 0.35) * hf;
        let sx = rng.uniform_range(0.1, 0.35) * wf;
        let kind = rng.below(3);
        let period = 2.0 + rng.below(4) as f64;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / sy, (x as f64 - cx) / sx);
                let inside = match kind {
                    0 => dy.abs() <= 1.0 && dx.abs() <= 1.0,
                    1 => dy * dy + dx * dx <= 1.0,
                    _ => {
                        dy.abs() <= 1.0
                            && dx.abs() <= 1.0
                            && ((x as f64 / period).floor() as i64) % 2 == 0
                    }
                };
                if inside {
                    img[(y * w + x) * 3..][..3].copy_from_slice(&col);
                }
            }
        }
    }
    Tensor::new(vec![h, w, 3], img.into_iter().map(|v| v as f32).collect()).expect("sized image")
}
