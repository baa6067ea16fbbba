//! Tensor kernels: pure forward functions and their adjoints.
//!
//! [`crate::graph::Graph`] records these on a tape; they are also usable
//! directly on plain tensors.

pub mod conv;
pub mod linalg;
pub mod pool;
pub mod shape;

pub use conv::{Padding, SpatialAxis};
pub use pool::{PoolAxis, PoolMode};

use crate::tensor::{Element, Tensor};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(slope)
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    // Branching keeps exp() from overflowing for large |x|.
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    // Saturated values are pulled back inside the open interval (0, 1).
    let half_eps = T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(T::one() - half_eps)
}

pub fn activation_forward<T: Element>(x: &Tensor<T>, act: Activation) -> Tensor<T> {
    x.map(|v| act.apply(v))
}
