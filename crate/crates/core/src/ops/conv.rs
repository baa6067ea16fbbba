//! 2-D cross-correlation via im2col + GEMM, and fixed 1-D filtering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that the output extent is `ceil(extent / stride)`.
    Same,
    Valid,
}

/// Resolved convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn same_extent(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

pub fn conv_geometry<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    let (batch, in_h, in_w, in_c) = input.dims4("conv2d")?;
    let (k_h, k_w, k_in, out_c) = kernel.dims4("conv2d")?;
    if k_h % 2 == 0 || k_w % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel extents must be odd, got {k_h}×{k_w}"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be at least 1"));
    }
    if k_in != in_c {
        return Err(Error::axes(
            "conv2d",
            "input channels",
            in_c,
            "kernel input channels",
            k_in,
        ));
    }
    if bias.len() != out_c {
        return Err(Error::axes(
            "conv2d",
            "bias length",
            bias.len(),
            "kernel output channels",
            out_c,
        ));
    }
    let (out_h, pad_top, out_w, pad_left) = match padding {
        Padding::Same => {
            let (oh, pt) = same_extent(in_h, k_h, stride);
            let (ow, pl) = same_extent(in_w, k_w, stride);
            (oh, pt, ow, pl)
        }
        Padding::Valid => {
            if in_h < k_h || in_w < k_w {
                return Err(Error::invalid(
                    "conv2d",
                    format!("valid convolution of {in_h}×{in_w} input with {k_h}×{k_w} kernel"),
                ));
            }
            ((in_h - k_h) / stride + 1, 0, (in_w - k_w) / stride + 1, 0)
        }
    };
    Ok(ConvGeometry {
        batch,
        in_h,
        in_w,
        in_c,
        k_h,
        k_w,
        out_h,
        out_w,
        out_c,
        stride,
        pad_top,
        pad_left,
    })
}

/// Gathers every receptive field of one image into a row of `cols`.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let patch = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.k_h {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                for kx in 0..g.k_w {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    let dst = &mut row[(ky * g.k_w + kx) * g.in_c..][..g.in_c];
                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                        dst.copy_from_slice(&image[src..src + g.in_c]);
                    }
                }
            }
        }
    }
}

/// Scatters column gradients back onto one image (adjoint of [`im2col`]).
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let patch = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.k_h {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.k_w {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = &row[(ky * g.k_w + kx) * g.in_c..][..g.in_c];
                    let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    for (d, &s) in image[dst..dst + g.in_c].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeometry,
) -> Tensor<T> {
    let in_len = g.in_h * g.in_w * g.in_c;
    let out_len = g.out_pixels() * g.out_c;
    let mut out = vec![T::zero(); g.batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(dst, image)| {
            let mut cols = vec![T::zero(); g.out_pixels() * g.patch_len()];
            im2col(g, image, &mut cols);
            for row in dst.chunks_mut(g.out_c) {
                row.copy_from_slice(bias.data());
            }
            T::gemm(
                g.out_pixels(),
                g.patch_len(),
                g.out_c,
                &cols,
                (g.patch_len() as isize, 1),
                kernel.data(),
                (g.out_c as isize, 1),
                T::one(),
                dst,
                g.out_c as isize,
            );
        });
    Tensor::from_parts(vec![g.batch, g.out_h, g.out_w, g.out_c], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_input, need_kernel, need_bias) = need;
    let in_len = g.in_h * g.in_w * g.in_c;
    let out_len = g.out_pixels() * g.out_c;
    let patch = g.patch_len();

    // One partial kernel gradient per image, summed afterwards in batch order
    // so the result does not depend on thread scheduling.
    let per_image: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = grad_out
        .data()
        .par_chunks(out_len)
        .zip(input.data().par_chunks(in_len))
        .map(|(dy, image)| {
            let mut dx = None;
            let mut dk = None;
            if need_kernel {
                let mut cols = vec![T::zero(); g.out_pixels() * patch];
                im2col(g, image, &mut cols);
                let mut acc = vec![T::zero(); patch * g.out_c];
                T::gemm(
                    patch,
                    g.out_pixels(),
                    g.out_c,
                    &cols,
                    (1, patch as isize),
                    dy,
                    (g.out_c as isize, 1),
                    T::zero(),
                    &mut acc,
                    g.out_c as isize,
                );
                dk = Some(acc);
            }
            if need_input {
                let mut dcols = vec![T::zero(); g.out_pixels() * patch];
                T::gemm(
                    g.out_pixels(),
                    g.out_c,
                    patch,
                    dy,
                    (g.out_c as isize, 1),
                    kernel.data(),
                    (1, g.out_c as isize),
                    T::zero(),
                    &mut dcols,
                    patch as isize,
                );
                let mut img = vec![T::zero(); in_len];
                col2im(g, &dcols, &mut img);
                dx = Some(img);
            }
            (dx, dk)
        })
        .collect();

    let input_grad = need_input.then(|| {
        let data = per_image
            .iter()
            .flat_map(|(dx, _)| {
                dx.as_ref()
                    .expect("input gradient computed")
                    .iter()
                    .copied()
            })
            .collect();
        Tensor::from_parts(input.shape().to_vec(), data)
    });
    let kernel_grad = need_kernel.then(|| {
        let mut acc = vec![T::zero(); patch * g.out_c];
        for (_, dk) in &per_image {
            for (a, &v) in acc
                .iter_mut()
                .zip(dk.as_ref().expect("kernel gradient computed"))
            {
                *a = *a + v;
            }
        }
        Tensor::from_parts(kernel.shape().to_vec(), acc)
    });
    let bias_grad = need_bias.then(|| {
        let mut acc = vec![T::zero(); g.out_c];
        for row in grad_out.data().chunks(g.out_c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        Tensor::from_parts(vec![g.out_c], acc)
    });
    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}

/// Spatial axis of a rank-4 image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialAxis {
    Height,
    Width,
}

/// Valid (unpadded) correlation with fixed taps along one spatial axis,
/// applied to every channel independently.
pub fn filter1d_forward<T: Element>(
    input: &Tensor<T>,
    taps: &[f64],
    axis: SpatialAxis,
) -> Result<Tensor<T>> {
    let (b, h, w, c) = input.dims4("filter1d")?;
    let n = taps.len();
    let extent = match axis {
        SpatialAxis::Height => h,
        SpatialAxis::Width => w,
    };
    if n == 0 || extent < n {
        return Err(Error::invalid(
            "filter1d",
            format!("{n} taps do not fit an extent of {extent}"),
        ));
    }
    let taps: Vec<T> = taps.iter().map(|&t| T::of(t)).collect();
    let (oh, ow) = match axis {
        SpatialAxis::Height => (h - n + 1, w),
        SpatialAxis::Width => (h, w - n + 1),
    };
    let step = match axis {
        SpatialAxis::Height => w * c,
        SpatialAxis::Width => c,
    };
    let x = input.data();
    let mut out = vec![T::zero(); b * oh * ow * c];
    for bi in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                let dst = ((bi * oh + y) * ow + xo) * c;
                let src = ((bi * h + y) * w + xo) * c;
                for (t, &tap) in taps.iter().enumerate() {
                    let s = src + t * step;
                    for ch in 0..c {
                        out[dst + ch] = out[dst + ch] + tap * x[s + ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, oh, ow, c], out))
}

pub fn filter1d_backward<T: Element>(
    input_shape: &[usize],
    taps: &[f64],
    axis: SpatialAxis,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (b, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (_, oh, ow, _) = grad_out.dims4("filter1d").expect("rank-4 gradient");
    let step = match axis {
        SpatialAxis::Height => w * c,
        SpatialAxis::Width => c,
    };
    let taps: Vec<T> = taps.iter().map(|&t| T::of(t)).collect();
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                let src = ((bi * oh + y) * ow + xo) * c;
                let dst = ((bi * h + y) * w + xo) * c;
                for (t, &tap) in taps.iter().enumerate() {
                    let d = dst + t * step;
                    for ch in 0..c {
                        dx[d + ch] = dx[d + ch] + tap * dy[src + ch];
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
        let bias = Tensor::zeros(vec![k.shape()[3]]).unwrap();
        let g = conv_geometry(x, k, &bias, stride, padding).unwrap();
        conv2d_forward(x, k, &bias, &g)
    }

    #[test]
    fn all_ones_same_padding() {
        let x = Tensor::<f64>::ones(vec![1, 3, 3, 1]).unwrap();
        let k = Tensor::<f64>::ones(vec![3, 3, 1, 1]).unwrap();
        let y = conv(&x, &k, 1, Padding::Same);
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn same_padding_with_stride_rounds_up() {
        let x = Tensor::<f64>::ones(vec![2, 7, 5, 2]).unwrap();
        let k = Tensor::<f64>::ones(vec![3, 3, 2, 4]).unwrap();
        assert_eq!(conv(&x, &k, 2, Padding::Same).shape(), &[2, 4, 3, 4]);
        assert_eq!(conv(&x, &k, 1, Padding::Valid).shape(), &[2, 5, 3, 4]);
    }

    #[test]
    fn mismatched_channels_name_both_axes() {
        let x = Tensor::<f64>::ones(vec![1, 4, 4, 3]).unwrap();
        let k = Tensor::<f64>::ones(vec![3, 3, 2, 1]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1]).unwrap();
        let err = conv_geometry(&x, &k, &b, 1, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("input channels (3)") && msg.contains("kernel input channels (2)"),
            "{msg}"
        );
    }

    #[test]
    fn even_kernels_rejected() {
        let x = Tensor::<f64>::ones(vec![1, 4, 4, 1]).unwrap();
        let k = Tensor::<f64>::ones(vec![2, 2, 1, 1]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1]).unwrap();
        assert!(conv_geometry(&x, &k, &b, 1, Padding::Same).is_err());
    }

    #[test]
    fn filter1d_averages_along_width() {
        let x = Tensor::<f64>::from_fn(vec![1, 1, 4, 1], |i| i as f64).unwrap();
        let y = filter1d_forward(&x, &[0.5, 0.5], SpatialAxis::Width).unwrap();
        assert_eq!(y.data(), &[0.5, 1.5, 2.5]);
    }
}
