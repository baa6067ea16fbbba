use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn dims3<T: Element>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, m, n] => Ok((b, m, n)),
        _ => Err(Error::invalid(
            op,
            format!("expected a rank-3 batch of matrices, got {:?}", t.shape()),
        )),
    }
}

/// `B×M×K · B×K×N -> B×M×N`.
pub fn matmul_forward<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k) = dims3(a, "matmul_batched")?;
    let (bb, kb, n) = dims3(b, "matmul_batched")?;
    if ba != bb {
        return Err(Error::axes(
            "matmul_batched",
            "lhs batch",
            ba,
            "rhs batch",
            bb,
        ));
    }
    if k != kb {
        return Err(Error::axes(
            "matmul_batched",
            "lhs columns",
            k,
            "rhs rows",
            kb,
        ));
    }
    let mut out = vec![T::zero(); ba * m * n];
    for i in 0..ba {
        T::gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            (k as isize, 1),
            &b.data()[i * k * n..(i + 1) * k * n],
            (n as isize, 1),
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            n as isize,
        );
    }
    Ok(Tensor::from_parts(vec![ba, m, n], out))
}

/// Gradients of `a·b` given the output gradient.
pub fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let mut da = vec![T::zero(); batch * m * k];
    let mut db = vec![T::zero(); batch * k * n];
    for i in 0..batch {
        let dy = &grad_out.data()[i * m * n..(i + 1) * m * n];
        // da = dy · bᵀ
        T::gemm(
            m,
            n,
            k,
            dy,
            (n as isize, 1),
            &b.data()[i * k * n..(i + 1) * k * n],
            (1, n as isize),
            T::zero(),
            &mut da[i * m * k..(i + 1) * m * k],
            k as isize,
        );
        // db = aᵀ · dy
        T::gemm(
            k,
            m,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            (1, k as isize),
            dy,
            (n as isize, 1),
            T::zero(),
            &mut db[i * k * n..(i + 1) * k * n],
            n as isize,
        );
    }
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    )
}

/// Swaps the last two axes of a rank-3 tensor.
pub fn transpose_last2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, n) = dims3(x, "transpose")?;
    let src = x.data();
    let mut out = vec![T::zero(); b * m * n];
    for i in 0..b {
        for r in 0..m {
            for c in 0..n {
                out[(i * n + c) * m + r] = src[(i * m + r) * n + c];
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, n, m], out))
}

/// Softmax over the last axis with max subtraction.
pub fn softmax_forward<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("tensors have rank >= 1");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` row by row.
pub fn softmax_backward<T: Element>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("tensors have rank >= 1");
    let mut dx = vec![T::zero(); y.len()];
    for ((dst, yr), dyr) in dx
        .chunks_mut(n)
        .zip(y.data().chunks(n))
        .zip(grad_out.data().chunks(n))
    {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dst.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let eye = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_fn(vec![1, 2, 3], |i| i as f64 - 2.5).unwrap();
        assert_eq!(matmul_forward(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let a = Tensor::<f64>::zeros(vec![1, 2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1, 2, 3]).unwrap();
        assert!(matmul_forward(&a, &b).is_err());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f32>::zeros(vec![1, 2]).unwrap();
        assert_eq!(softmax_forward(&x).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let x = Tensor::<f32>::new(vec![1, 3], vec![1000.0, 1000.0, -1000.0]).unwrap();
        let y = softmax_forward(&x);
        assert!(y.all_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn transpose_round_trips() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 4], |i| i as f32).unwrap();
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.shape(), &[2, 4, 3]);
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }
}
