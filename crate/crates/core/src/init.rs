use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

/// He-normal kernel for a `k_h×k_w×C_in×C_out` shape: `N(0, sqrt(2 / fan_in))`
/// with `fan_in = k_h·k_w·C_in`.
pub fn init_he_normal<T: Element>(shape: &[usize], rng: &mut RngState) -> Result<Tensor<T>> {
    let fan_in = fan_in(shape)?;
    let std_dev = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.normal(0.0, std_dev)))
}

/// Product of every axis except the last (output) one.
pub fn fan_in(shape: &[usize]) -> Result<usize> {
    match shape.split_last() {
        Some((_, rest)) if !rest.is_empty() => Ok(rest.iter().product()),
        _ => Err(Error::invalid(
            "init_he_normal",
            format!("kernel shape {shape:?} has no input axes"),
        )),
    }
}
