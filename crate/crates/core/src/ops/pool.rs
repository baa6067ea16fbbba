use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Which axes a global pool reduces over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// Reduce height and width: `B×1×1×C`.
    Spatial,
    /// Reduce channels: `B×H×W×1`.
    Channel,
}

/// Max pooling without padding. Returns the output and, per output cell,
/// the flat input index of the winning element (first maximum in scan order).
pub fn maxpool2d_forward<T: Element>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, h, w, c) = input.dims4("maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid(
            "maxpool2d",
            "window and stride must be at least 1",
        ));
    }
    if window > h || window > w {
        return Err(Error::invalid(
            "maxpool2d",
            format!("window {window} exceeds spatial extent {h}×{w}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((bi * h + oy * stride) * w + ox * stride) * c + ch;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = ((bi * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![b, oh, ow, c], out), argmax))
}

/// Routes each output gradient to its recorded argmax.
pub fn scatter_argmax<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx[idx] = dx[idx] + g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

pub fn upsample_nearest_forward<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, h, w, c) = input.dims4("upsample_nearest")?;
    if factor == 0 {
        return Err(Error::invalid(
            "upsample_nearest",
            "factor must be at least 1",
        ));
    }
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((bi * h + oy / factor) * w + ox / factor) * c;
                out.extend_from_slice(&x[src..src + c]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, oh, ow, c], out))
}

pub fn upsample_nearest_backward<T: Element>(
    input_shape: &[usize],
    factor: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (b, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (oh, ow) = (h * factor, w * factor);
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((bi * oh + oy) * ow + ox) * c;
                let dst = ((bi * h + oy / factor) * w + ox / factor) * c;
                for ch in 0..c {
                    dx[dst + ch] = dx[dst + ch] + dy[src + ch];
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Global average/max pooling. For max pooling the second value holds the
/// flat input index selected for each output cell.
pub fn global_pool_forward<T: Element>(
    input: &Tensor<T>,
    mode: PoolMode,
    axis: PoolAxis,
) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
    let (b, h, w, c) = input.dims4("pool_global")?;
    let x = input.data();
    // For each output cell, the input indices it reduces over.
    let (out_shape, groups): (Vec<usize>, Vec<Vec<usize>>) = match axis {
        PoolAxis::Spatial => (
            vec![b, 1, 1, c],
            (0..b)
                .flat_map(|bi| {
                    (0..c).map(move |ch| {
                        (0..h * w)
                            .map(|p| (bi * h * w + p) * c + ch)
                            .collect::<Vec<_>>()
                    })
                })
                .collect(),
        ),
        PoolAxis::Channel => (
            vec![b, h, w, 1],
            (0..b * h * w)
                .map(|p| (p * c..(p + 1) * c).collect())
                .collect(),
        ),
    };
    let mut out = Vec::with_capacity(groups.len());
    let mut argmax = Vec::new();
    for group in &groups {
        match mode {
            PoolMode::Avg => {
                let n = T::of(group.len() as f64);
                out.push(group.iter().map(|&i| x[i]).sum::<T>() / n);
            }
            PoolMode::Max => {
                let mut best = group[0];
                for &i in &group[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let argmax = (mode == PoolMode::Max).then_some(argmax);
    Ok((Tensor::from_parts(out_shape, out), argmax))
}

pub fn global_avg_backward<T: Element>(
    input_shape: &[usize],
    axis: PoolAxis,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (b, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); b * h * w * c];
    match axis {
        PoolAxis::Spatial => {
            let n = T::of((h * w) as f64);
            for (i, d) in dx.iter_mut().enumerate() {
                let bi = i / (h * w * c);
                let ch = i % c;
                *d = dy[bi * c + ch] / n;
            }
        }
        PoolAxis::Channel => {
            let n = T::of(c as f64);
            for (i, d) in dx.iter_mut().enumerate() {
                *d = dy[i / c] / n;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}
