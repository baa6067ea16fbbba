//! Training loss and image quality metrics.
//!
//! Metrics are evaluated in `f64` regardless of the tensor element type.
//! SSIM uses a normalized Gaussian window without padding ("valid"
//! windows), averaged over windows, channels and batch. SSIM is always
//! reported in `[-1, 1]`; tables that print it as a percentage multiply by
//! 100.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::conv::{filter1d_forward, SpatialAxis};
use crate::tensor::{Element, Tensor};

/// Weights of `alpha·(1 − SSIM) + beta·MAE` and the SSIM constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub dynamic_range: f64,
}

impl Default for LossConfig {
    /// The fine-tuning weights `alpha = 1`, `beta = 0.5`.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl LossConfig {
    /// Pure MAE, used for the first training phase.
    pub fn mae_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            ..Self::default()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            out.push(format!(
                "alpha, beta: must be non-negative with a positive sum, got {} and {}",
                self.alpha, self.beta
            ));
        }
        if self.ssim_window == 0 || self.ssim_window.is_multiple_of(2) {
            out.push(format!(
                "ssim_window: must be odd, got {}",
                self.ssim_window
            ));
        }
        if !(self.ssim_sigma > 0.0) {
            out.push(format!(
                "ssim_sigma: must be positive, got {}",
                self.ssim_sigma
            ));
        }
        if !(self.dynamic_range > 0.0) {
            out.push(format!(
                "dynamic_range: must be positive, got {}",
                self.dynamic_range
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn c1(&self) -> f64 {
        (self.ssim_k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.ssim_k2 * self.dynamic_range).powi(2)
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn check_pair<T: Element>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op,
            shapes: format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        });
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn mae<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair("mae", pred, target)?;
    let total: f64 = pred
        .to_f64_vec()
        .iter()
        .zip(target.to_f64_vec())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn mse<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair("mse", pred, target)?;
    let total: f64 = pred
        .to_f64_vec()
        .iter()
        .zip(target.to_f64_vec())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(total / pred.len() as f64)
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`; `f64::INFINITY` when the
/// inputs are identical.
pub fn psnr<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let err = mse(pred, target)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / err).log10())
}

/// Views `H×W×C` as `1×H×W×C`.
fn as_batch<T: Element>(t: &Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    match t.rank() {
        4 => Ok(t.clone()),
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(t.shape());
            t.clone().reshape(shape)
        }
        _ => Err(Error::invalid(
            op,
            format!("expected an image tensor, got {:?}", t.shape()),
        )),
    }
}

fn check_window(op: &'static str, shape: &[usize], window: usize) -> Result<()> {
    let (h, w) = (shape[1], shape[2]);
    if h < window || w < window {
        return Err(Error::invalid(
            op,
            format!("image {h}×{w} is smaller than the {window}×{window} SSIM window"),
        ));
    }
    Ok(())
}

/// Mean SSIM of two `H×W×C` or `B×H×W×C` images.
pub fn ssim<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    check_pair("ssim", pred, target)?;
    let x: Tensor<f64> = as_batch(pred, "ssim")?.cast();
    let y: Tensor<f64> = as_batch(target, "ssim")?.cast();
    check_window("ssim", x.shape(), cfg.ssim_window)?;
    let taps = gaussian_taps(cfg.ssim_window, cfg.ssim_sigma);
    let blur = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let t = filter1d_forward(t, &taps, SpatialAxis::Height)?;
        filter1d_forward(&t, &taps, SpatialAxis::Width)
    };
    let product = |a: &Tensor<f64>, b: &Tensor<f64>| {
        Tensor::from_parts(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect(),
        )
    };
    let mu_x = blur(&x)?;
    let mu_y = blur(&y)?;
    let e_xx = blur(&product(&x, &x))?;
    let e_yy = blur(&product(&y, &y))?;
    let e_xy = blur(&product(&x, &y))?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x.data()[i], mu_y.data()[i]);
        let var_x = e_xx.data()[i] - mx * mx;
        let var_y = e_yy.data()[i] - my * my;
        let cov = e_xy.data()[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// Differentiable mean SSIM of two `B×H×W×C` graph values.
pub fn ssim_graph<T: Element>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    check_pair("ssim", g.value(pred), g.value(target))?;
    g.value(pred).dims4("ssim")?;
    check_window("ssim", g.value(pred).shape(), cfg.ssim_window)?;
    let taps = gaussian_taps(cfg.ssim_window, cfg.ssim_sigma);
    let blur = |g: &mut Graph<T>, v: Var| -> Result<Var> {
        let t = g.filter1d(v, &taps, SpatialAxis::Height)?;
        g.filter1d(t, &taps, SpatialAxis::Width)
    };
    let mu_x = blur(g, pred)?;
    let mu_y = blur(g, target)?;
    let xx = g.mul(pred, pred)?;
    let yy = g.mul(target, target)?;
    let xy = g.mul(pred, target)?;
    let e_xx = blur(g, xx)?;
    let e_yy = blur(g, yy)?;
    let e_xy = blur(g, xy)?;

    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_xx)?;
    let var_y = g.sub(e_yy, mu_yy)?;
    let cov = g.sub(e_xy, mu_xy)?;

    let lum_num = g.scale(mu_xy, 2.0);
    let lum_num = g.add_scalar(lum_num, cfg.c1());
    let cs_num = g.scale(cov, 2.0);
    let cs_num = g.add_scalar(cs_num, cfg.c2());
    let num = g.mul(lum_num, cs_num)?;

    let lum_den = g.add(mu_xx, mu_yy)?;
    let lum_den = g.add_scalar(lum_den, cfg.c1());
    let cs_den = g.add(var_x, var_y)?;
    let cs_den = g.add_scalar(cs_den, cfg.c2());
    let den = g.mul(lum_den, cs_den)?;

    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// Differentiable mean absolute error.
pub fn mae_graph<T: Element>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff);
    Ok(g.mean(abs))
}

/// `alpha·(1 − SSIM(pred, target)) + beta·MAE(pred, target)` as a scalar node.
pub fn composite_loss<T: Element>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let mut terms = Vec::with_capacity(2);
    if cfg.alpha > 0.0 {
        let s = ssim_graph(g, pred, target, cfg)?;
        let dissim = g.scale(s, -1.0);
        let dissim = g.add_scalar(dissim, 1.0);
        terms.push(g.scale(dissim, cfg.alpha));
    }
    if cfg.beta > 0.0 {
        let m = mae_graph(g, pred, target)?;
        terms.push(g.scale(m, cfg.beta));
    }
    match terms[..] {
        [single] => Ok(single),
        [a, b] => g.add(a, b),
        _ => unreachable!("validated: alpha + beta > 0"),
    }
}
