//! Central finite-difference gradient checks in f64.

use attsf::{Graph, RngState, Tensor, Var};

pub const STEP: f64 = 1e-4;

pub fn random(shape: &[usize], rng: &mut RngState, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform_range(lo, hi)).collect(),
    )
    .unwrap()
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Builds `f` on parameter leaves holding `inputs`, reduces its output to a
/// scalar by a fixed random projection, and compares analytic gradients
/// with central differences at up to `coords` random coordinates of each
/// input. Returns the worst relative error.
pub fn check<F>(inputs: &[Tensor<f64>], coords: usize, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = RngState::new(seed);
    let projection = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars);
        random(g.value(y).shape(), &mut rng, -1.0, 1.0)
    };
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars);
        g.value(y)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = f(&mut g, &vars);
    let w = g.constant(projection.clone());
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    let mut grads = g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.take(vars[i]).unwrap();
        let picks: Vec<usize> = if input.len() <= coords {
            (0..input.len()).collect()
        } else {
            (0..coords).map(|_| rng.below(input.len())).collect()
        };
        for j in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric, 1e-3));
        }
    }
    worst
}
