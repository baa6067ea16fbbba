use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Concatenates along the last (channel) axis.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat", "needs at least one input"))?;
    let lead = &first.shape()[..first.rank() - 1];
    if inputs
        .iter()
        .any(|t| t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead)
    {
        let shapes: Vec<_> = inputs.iter().map(|t| format!("{:?}", t.shape())).collect();
        return Err(Error::ShapeMismatch {
            op: "concat",
            shapes: shapes.join(", "),
        });
    }
    let widths: Vec<usize> = inputs.iter().map(|t| *t.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_parts(shape, out))
}

/// Channels `start..start + len` of the last axis.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let c = *x.shape().last().unwrap();
    if len == 0 || start + len > c {
        return Err(Error::invalid(
            "slice_channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    let out: Vec<T> = x
        .data()
        .chunks(c)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Row-major strides of `mask` as seen from `target`'s index space, zero on
/// broadcast axes.
pub fn broadcast_strides(target: &[usize], mask: &[usize], op: &'static str) -> Result<Vec<usize>> {
    if target.len() != mask.len() || target.iter().zip(mask).any(|(&t, &m)| m != t && m != 1) {
        return Err(Error::ShapeMismatch {
            op,
            shapes: format!("{target:?} and {mask:?} do not broadcast"),
        });
    }
    let mut strides = vec![0; mask.len()];
    let mut acc = 1;
    for axis in (0..mask.len()).rev() {
        strides[axis] = if mask[axis] == 1 { 0 } else { acc };
        acc *= mask[axis];
    }
    Ok(strides)
}

/// For every flat index of `target`, the flat index into the broadcast mask.
pub fn broadcast_index_map(target: &[usize], strides: &[usize]) -> Vec<usize> {
    let len: usize = target.iter().product();
    let mut map = Vec::with_capacity(len);
    let mut idx = vec![0usize; target.len()];
    for _ in 0..len {
        map.push(idx.iter().zip(strides).map(|(i, s)| i * s).sum());
        for axis in (0..target.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < target[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    map
}

pub fn mul_broadcast_forward<T: Element>(a: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let strides = broadcast_strides(a.shape(), mask.shape(), "mul_broadcast")?;
    let map = broadcast_index_map(a.shape(), &strides);
    let m = mask.data();
    let out = a.data().iter().zip(&map).map(|(&v, &j)| v * m[j]).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub fn mul_broadcast_backward<T: Element>(
    a: &Tensor<T>,
    mask: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let strides =
        broadcast_strides(a.shape(), mask.shape(), "mul_broadcast").expect("validated in forward");
    let map = broadcast_index_map(a.shape(), &strides);
    let m = mask.data();
    let mut da = vec![T::zero(); a.len()];
    let mut dm = vec![T::zero(); mask.len()];
    for (i, (&g, &j)) in grad_out.data().iter().zip(&map).enumerate() {
        da[i] = g * m[j];
        dm[j] = dm[j] + g * a.data()[i];
    }
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(mask.shape().to_vec(), dm),
    )
}
