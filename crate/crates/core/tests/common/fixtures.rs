use attsf::data::{synth_dual_pixel, synthetic_sharp, DepthMap, DualPixelSample, SynthConfig};
use attsf::RngState;

/// `count` synthetic dual-pixel patches of `size×size`, each drawn from its
/// own stream of `seed`.
pub fn synthetic_patches(
    count: usize,
    size: usize,
    radius: f64,
    seed: u64,
) -> Vec<DualPixelSample> {
    let root = RngState::new(seed);
    let cfg = SynthConfig {
        max_blur_radius: radius,
        depth_map: DepthMap::RandomSmooth,
    };
    (0..count as u64)
        .map(|i| {
            let mut rng = root.derive(i);
            let sharp = synthetic_sharp(size, size, &mut rng);
            synth_dual_pixel(&format!("patch{i}"), &sharp, &cfg, &mut rng).unwrap()
        })
        .collect()
}
