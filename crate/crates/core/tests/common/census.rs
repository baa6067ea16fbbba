use attsf::nn::ModelConfig;

/// Parameter count written out layer by layer, independent of the model code.
pub fn hand_count(cfg: &ModelConfig) -> usize {
    let conv = |k: usize, i: usize, o: usize| k * k * i * o + o;
    let w = |l: usize| cfg.base_channels << l;
    let mut total = 0;
    for l in 0..cfg.levels {
        let in_c = if l == 0 { 3 } else { w(l - 1) };
        let dual = conv(3, in_c, w(l))
            + conv(3, w(l), w(l))
            + conv(1, 2, 1)
            + conv(1, w(l), w(l))
            + conv(1, 2 * w(l), in_c);
        total += 2 * (dual + conv(3, in_c, w(l)) + conv(3, w(l), w(l)));
    }
    let c = 2 * w(cfg.levels - 1);
    let inner = c / cfg.nonlocal_reduction;
    total += cfg
        .triple_local_kernels
        .iter()
        .map(|&k| conv(k, c, c))
        .sum::<usize>();
    total += conv(1, cfg.triple_local_kernels.len() * c, c);
    total += 3 * conv(1, c, inner) + conv(1, inner, c);
    total += conv(1, 2 * c, c);
    for l in 0..cfg.levels {
        let bottom = if l + 1 == cfg.levels { c } else { w(l + 1) };
        total += conv(3, bottom, w(l)) + conv(3, 3 * w(l), w(l)) + conv(3, w(l), w(l));
    }
    total + conv(3, w(0), cfg.output_channels)
}
