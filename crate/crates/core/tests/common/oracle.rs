//! Direct loop implementations used as references for the fast paths.

use attsf::loss::LossConfig;
use attsf::Tensor;

fn at4(t: &Tensor<f64>, b: usize, y: usize, x: usize, c: usize) -> f64 {
    let s = t.shape();
    t.data()[((b * s[1] + y) * s[2] + x) * s[3] + c]
}

/// Cross-correlation with TensorFlow-style padding: `same` gives
/// `ceil(H / stride)` rows with the extra padding row at the bottom.
pub fn conv2d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: &[f64],
    stride: usize,
    same: bool,
) -> Tensor<f64> {
    let (b, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let ph = ((oh - 1) * stride + kh).saturating_sub(h);
        let pw = ((ow - 1) * stride + kw).saturating_sub(w);
        (oh, ow, ph / 2, pw / 2)
    } else {
        ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
    };
    let mut out = vec![0.0; b * oh * ow * cout];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let kv = k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += kv * at4(x, bi, iy as usize, ix as usize, ci);
                            }
                        }
                    }
                    out[((bi * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, oh, ow, cout], out).unwrap()
}

pub fn maxpool(x: &Tensor<f64>, window: usize, stride: usize) -> Tensor<f64> {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::new();
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..window {
                        for kx in 0..window {
                            m = m.max(at4(x, bi, oy * stride + ky, ox * stride + kx, ch));
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::new(vec![b, oh, ow, c], out).unwrap()
}

/// Batched `B×M×K · B×K×N`.
pub fn matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let mut out = vec![0.0; bs * m * n];
    for bi in 0..bs {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[(bi * m + i) * k + p] * b.data()[(bi * k + p) * n + j];
                }
                out[(bi * m + i) * n + j] = acc;
            }
        }
    }
    Tensor::new(vec![bs, m, n], out).unwrap()
}

/// `y = x·W + b` at one pixel for a 1×1 kernel stored `1×1×Cin×Cout`.
fn pointwise(v: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let cout = w.shape()[3];
    (0..cout)
        .map(|o| {
            b.data()[o]
                + v.iter()
                    .enumerate()
                    .map(|(i, x)| x * w.data()[i * cout + o])
                    .sum::<f64>()
        })
        .collect()
}

/// Embedded-Gaussian non-local block, one position pair at a time.
/// `weights` are `(theta, phi, g, out)` kernel/bias pairs.
pub fn nonlocal(
    x: &Tensor<f64>,
    weights: [(&Tensor<f64>, &Tensor<f64>); 4],
) -> (Tensor<f64>, Vec<f64>) {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = h * w;
    let mut out = Vec::with_capacity(x.len());
    let mut attention = Vec::with_capacity(b * n * n);
    for bi in 0..b {
        let pixel =
            |p: usize| -> Vec<f64> { (0..c).map(|ch| at4(x, bi, p / w, p % w, ch)).collect() };
        let theta: Vec<Vec<f64>> = (0..n)
            .map(|p| pointwise(&pixel(p), weights[0].0, weights[0].1))
            .collect();
        let phi: Vec<Vec<f64>> = (0..n)
            .map(|p| pointwise(&pixel(p), weights[1].0, weights[1].1))
            .collect();
        let gv: Vec<Vec<f64>> = (0..n)
            .map(|p| pointwise(&pixel(p), weights[2].0, weights[2].1))
            .collect();
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| theta[i].iter().zip(&phi[j]).map(|(a, b)| a * b).sum())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let a: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
            let inner = gv[0].len();
            let y: Vec<f64> = (0..inner)
                .map(|d| (0..n).map(|j| a[j] * gv[j][d]).sum())
                .collect();
            let proj = pointwise(&y, weights[3].0, weights[3].1);
            let xi = pixel(i);
            out.extend(xi.iter().zip(proj).map(|(p, q)| p + q));
            attention.extend(a);
        }
    }
    (Tensor::new(x.shape().to_vec(), out).unwrap(), attention)
}

/// Mean SSIM computed window by window with an explicit 2-D Gaussian.
pub fn ssim(x: &Tensor<f64>, y: &Tensor<f64>, cfg: &LossConfig) -> f64 {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = cfg.ssim_window;
    let center = (k / 2) as f64;
    let mut window = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - center).powi(2) + (j as f64 - center).powi(2);
            window[i * k + j] = (-d2 / (2.0 * cfg.ssim_sigma * cfg.ssim_sigma)).exp();
        }
    }
    let total: f64 = window.iter().sum();
    window.iter_mut().for_each(|v| *v /= total);
    let c1 = (cfg.ssim_k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * cfg.dynamic_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for bi in 0..b {
        for ch in 0..c {
            for oy in 0..=h - k {
                for ox in 0..=w - k {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let wt = window[i * k + j];
                            let a = at4(x, bi, oy + i, ox + j, ch);
                            let bb = at4(y, bi, oy + i, ox + j, ch);
                            mx += wt * a;
                            my += wt * bb;
                            sxx += wt * a * a;
                            syy += wt * bb * bb;
                            sxy += wt * a * bb;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

pub fn mae(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (x[i] - y[i]).abs();
    }
    s / x.len() as f64
}

pub fn psnr(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (x[i] - y[i]) * (x[i] - y[i]);
    }
    let mse = s / x.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Number of `size`-windows with top-left corners on the stride grid that
/// fit inside `extent`, counted by walking the grid.
pub fn patch_count(extent: usize, size: usize, stride: usize) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + size <= extent {
        n += 1;
        start += stride;
    }
    n
}
