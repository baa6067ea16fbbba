//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the DAG and `backward` walks it once in reverse.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeometry, Padding, SpatialAxis};
use crate::ops::{self, linalg, pool, shape, Activation, PoolAxis, PoolMode};
use crate::tensor::{Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Activation {
        input: Var,
        act: Activation,
    },
    GlobalAvg {
        input: Var,
        axis: PoolAxis,
    },
    GlobalMax {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    MulBroadcast {
        input: Var,
        mask: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale {
        input: Var,
        factor: f64,
    },
    Shift(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Filter1d {
        input: Var,
        taps: Vec<f64>,
        axis: SpatialAxis,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::Concat(inputs) => inputs.clone(),
            Op::MulBroadcast { input, mask } => vec![*input, *mask],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::MaxPool { input, .. }
            | Op::Upsample { input, .. }
            | Op::Activation { input, .. }
            | Op::GlobalAvg { input, .. }
            | Op::GlobalMax { input, .. }
            | Op::SliceChannels { input, .. }
            | Op::Scale { input, .. }
            | Op::Filter1d { input, .. } => vec![*input],
            Op::Shift(x)
            | Op::Abs(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::Softmax(x) => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Build one per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            shapes: format!("{:?} and {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geometry = conv::conv_geometry(x, k, b, stride, padding)?;
        let y = conv::conv2d_forward(x, k, b, &geometry);
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = pool::maxpool2d_forward(self.value(input), window, stride)?;
        Ok(self.push(y, Op::MaxPool { input, argmax }))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let y = pool::upsample_nearest_forward(self.value(input), factor)?;
        Ok(self.push(y, Op::Upsample { input, factor }))
    }

    pub fn activation(&mut self, input: Var, act: Activation) -> Var {
        let y = ops::activation_forward(self.value(input), act);
        self.push(y, Op::Activation { input, act })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        self.activation(input, Activation::LeakyRelu { slope })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn pool_global(&mut self, input: Var, mode: PoolMode, axis: PoolAxis) -> Result<Var> {
        let (y, argmax) = pool::global_pool_forward(self.value(input), mode, axis)?;
        let op = match argmax {
            Some(argmax) => Op::GlobalMax { input, argmax },
            None => Op::GlobalAvg { input, axis },
        };
        Ok(self.push(y, op))
    }

    /// Concatenation along the channel (last) axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let y = shape::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(inputs.to_vec())))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let y = shape::slice_channels(self.value(input), start, len)?;
        Ok(self.push(y, Op::SliceChannels { input, start }))
    }

    /// `input ⊙ mask` where every axis of `mask` equals the input's or is 1.
    pub fn mul_broadcast(&mut self, input: Var, mask: Var) -> Result<Var> {
        let y = shape::mul_broadcast_forward(self.value(input), self.value(mask))?;
        Ok(self.push(y, Op::MulBroadcast { input, mask }))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let out = zip_map(x, y, f);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let y = self.value(input).map(|v| v * f);
        self.push(y, Op::Scale { input, factor })
    }

    pub fn add_scalar(&mut self, input: Var, offset: f64) -> Var {
        let c = T::of(offset);
        let y = self.value(input).map(|v| v + c);
        self.push(y, Op::Shift(input))
    }

    pub fn abs(&mut self, input: Var) -> Var {
        let y = self.value(input).map(|v| v.abs());
        self.push(y, Op::Abs(input))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let y = Tensor::scalar(self.value(input).sum());
        self.push(y, Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let y = Tensor::scalar(x.sum() / T::of(x.len() as f64));
        self.push(y, Op::Mean(input))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape(input)))
    }

    /// Batched matrix product `B×M×K · B×K×N`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = linalg::matmul_forward(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// Swaps the two matrix axes of a `B×M×N` tensor.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let y = linalg::transpose_last2(self.value(input))?;
        Ok(self.push(y, Op::Transpose(input)))
    }

    pub fn softmax(&mut self, input: Var) -> Var {
        let y = linalg::softmax_forward(self.value(input));
        self.push(y, Op::Softmax(input))
    }

    /// Valid correlation with fixed taps along one spatial axis.
    pub fn filter1d(&mut self, input: Var, taps: &[f64], axis: SpatialAxis) -> Result<Var> {
        let y = conv::filter1d_forward(self.value(input), taps, axis)?;
        Ok(self.push(
            y,
            Op::Filter1d {
                input,
                taps: taps.to_vec(),
                axis,
            },
        ))
    }

    /// Gradient contributions of node `i` to each of its parents.
    fn local_grads(&self, i: usize, dy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let grads = conv::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    dy,
                    geometry,
                    (needs(*input), needs(*kernel), needs(*bias)),
                );
                out.extend(grads.input.map(|g| (*input, g)));
                out.extend(grads.kernel.map(|g| (*kernel, g)));
                out.extend(grads.bias.map(|g| (*bias, g)));
            }
            Op::MaxPool { input, argmax } | Op::GlobalMax { input, argmax } => {
                out.push((
                    *input,
                    pool::scatter_argmax(val(*input).shape(), argmax, dy),
                ));
            }
            Op::Upsample { input, factor } => {
                let g = pool::upsample_nearest_backward(val(*input).shape(), *factor, dy);
                out.push((*input, g));
            }
            Op::Activation { input, act } => {
                let x = val(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(dy.data())
                    .map(|((&xv, &yv), &g)| g * act.derivative(xv, yv))
                    .collect();
                out.push((*input, Tensor::from_parts(x.shape().to_vec(), data)));
            }
            Op::GlobalAvg { input, axis } => {
                let g = pool::global_avg_backward(val(*input).shape(), *axis, dy);
                out.push((*input, g));
            }
            Op::Concat(inputs) => {
                let mut start = 0;
                for &v in inputs {
                    let width = *val(v).shape().last().unwrap();
                    if needs(v) {
                        let g = shape::slice_channels(dy, start, width).expect("in range");
                        out.push((v, g));
                    }
                    start += width;
                }
            }
            Op::SliceChannels { input, start } => {
                let x = val(*input);
                let c = *x.shape().last().unwrap();
                let w = *dy.shape().last().unwrap();
                let mut g = x.zeros_like();
                for (row, src) in g.data_mut().chunks_mut(c).zip(dy.data().chunks(w)) {
                    row[*start..*start + w].copy_from_slice(src);
                }
                out.push((*input, g));
            }
            Op::MulBroadcast { input, mask } => {
                let (dx, dm) = shape::mul_broadcast_backward(val(*input), val(*mask), dy);
                out.push((*input, dx));
                out.push((*mask, dm));
            }
            Op::Add(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                out.push((*a, zip_map(dy, val(*b), |g, y| g * y)));
                out.push((*b, zip_map(dy, val(*a), |g, x| g * x)));
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                out.push((*a, zip_map(dy, y, |g, yv| g / yv)));
                let db = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(y.data())
                    .map(|((&g, &xv), &yv)| -g * xv / (yv * yv))
                    .collect();
                out.push((*b, Tensor::from_parts(y.shape().to_vec(), db)));
            }
            Op::Scale { input, factor } => {
                let f = T::of(*factor);
                out.push((*input, dy.map(|g| g * f)));
            }
            Op::Shift(x) => out.push((*x, dy.clone())),
            Op::Abs(x) => {
                let sign = |v: T| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                out.push((*x, zip_map(dy, val(*x), |g, v| g * sign(v))));
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                out.push((*x, val(*x).map(|_| g)));
            }
            Op::Mean(x) => {
                let g = dy.data()[0] / T::of(val(*x).len() as f64);
                out.push((*x, val(*x).map(|_| g)));
            }
            Op::Reshape(x) => {
                let g = dy
                    .clone()
                    .reshape(val(*x).shape().to_vec())
                    .expect("same length");
                out.push((*x, g));
            }
            Op::MatMul(a, b) => {
                let (da, db) = linalg::matmul_backward(val(*a), val(*b), dy);
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Transpose(x) => {
                out.push((*x, linalg::transpose_last2(dy).expect("rank 3")));
            }
            Op::Softmax(x) => {
                out.push((*x, linalg::softmax_backward(&node.value, dy)));
            }
            Op::Filter1d { input, taps, axis } => {
                let g = conv::filter1d_backward(val(*input).shape(), taps, *axis, dy);
                out.push((*input, g));
            }
        }
        out.retain(|(v, _)| needs(*v));
        out
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every node that requires a gradient and lies on the tape up to `loss`
    /// gets `d loss / d node`; parameters the loss does not depend on get
    /// zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(root.value.map(|_| T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            for (parent, g) in self.local_grads(i, &dy) {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(dy);
        }
        for (i, slot) in grads.iter_mut().enumerate() {
            let node = &self.nodes[i];
            if slot.is_none() && node.requires_grad && matches!(node.op, Op::Leaf) {
                *slot = Some(node.value.zeros_like());
            }
        }
        Ok(Gradients { grads })
    }
}
