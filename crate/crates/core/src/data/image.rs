//! Geometric helpers for `H×W×C` image tensors.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) fn dims3<T: Element>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::invalid(
            op,
            format!("expected an H×W×C image, got {:?}", t.shape()),
        )),
    }
}

pub fn crop<T: Element>(
    img: &Tensor<T>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let (h, w, c) = dims3(img, "crop")?;
    if top + height > h || left + width > w || height == 0 || width == 0 {
        return Err(Error::invalid(
            "crop",
            format!("window {height}×{width} at ({top}, {left}) leaves the {h}×{w} image"),
        ));
    }
    let mut out = Vec::with_capacity(height * width * c);
    for y in top..top + height {
        let row = (y * w + left) * c;
        out.extend_from_slice(&img.data()[row..row + width * c]);
    }
    Ok(Tensor::from_parts(vec![height, width, c], out))
}

fn remap<T: Element>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> Tensor<T> {
    let (_, w, c) = dims3(img, "remap").expect("rank-3 image");
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx) = src(y, x);
            let s = (sy * w + sx) * c;
            out.extend_from_slice(&img.data()[s..s + c]);
        }
    }
    Tensor::from_parts(vec![out_h, out_w, c], out)
}

/// Mirrors left-right.
pub fn flip_horizontal<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let (h, w, _) = dims3(img, "flip").expect("rank-3 image");
    remap(img, h, w, |y, x| (y, w - 1 - x))
}

/// Mirrors top-bottom.
pub fn flip_vertical<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let (h, w, _) = dims3(img, "flip").expect("rank-3 image");
    remap(img, h, w, |y, x| (h - 1 - y, x))
}

/// Counter-clockwise rotation by `quarter_turns × 90°`.
pub fn rotate90<T: Element>(img: &Tensor<T>, quarter_turns: u8) -> Tensor<T> {
    let (h, w, _) = dims3(img, "rotate").expect("rank-3 image");
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => remap(img, w, h, |y, x| (x, w - 1 - y)),
        2 => remap(img, h, w, |y, x| (h - 1 - y, w - 1 - x)),
        _ => remap(img, w, h, |y, x| (h - 1 - x, y)),
    }
}

/// Mirror index without edge repetition (`-1 → 1`, `n → n − 2`), valid for
/// any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the bottom and right edges up to `height×width`.
pub fn pad_reflect<T: Element>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let (h, w, _) = dims3(img, "pad_reflect")?;
    if height < h || width < w {
        return Err(Error::invalid(
            "pad_reflect",
            format!("target {height}×{width} is smaller than the {h}×{w} image"),
        ));
    }
    Ok(remap(img, height, width, |y, x| {
        (reflect_index(y as isize, h), reflect_index(x as isize, w))
    }))
}
