//! Bottleneck blocks: multi-kernel local features and non-local correlation.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::params::{conv_params, Bound, Conv2d, ParamBuilder};
use crate::tensor::Element;

/// Parallel `k×k` conv+ReLU branches, concatenated and compressed by a 1×1 conv.
#[derive(Debug, Clone)]
pub struct TripleLocal {
    pub branches: Vec<Conv2d>,
    pub compress: Conv2d,
}

impl TripleLocal {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        channels: usize,
        kernels: &[usize],
    ) -> Result<Self> {
        if kernels.is_empty() || kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "triple_local_kernels must be non-empty odd sizes, got {kernels:?}"
            )));
        }
        let branches = kernels
            .iter()
            .map(|&k| b.conv(&format!("branch{k}"), k, channels, channels))
            .collect::<Result<Vec<_>>>()?;
        let compress = b.conv("compress", 1, kernels.len() * channels, channels)?;
        Ok(Self { branches, compress })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(g, p, x)?;
            outs.push(g.relu(y));
        }
        let cat = g.concat(&outs)?;
        self.compress.forward(g, p, cat)
    }

    pub fn param_count(channels: usize, kernels: &[usize]) -> usize {
        kernels
            .iter()
            .map(|&k| conv_params(k, channels, channels))
            .sum::<usize>()
            + conv_params(1, kernels.len() * channels, channels)
    }
}

/// Embedded-Gaussian non-local block with a residual output projection.
#[derive(Debug, Clone)]
pub struct GlobalLocal {
    pub theta: Conv2d,
    pub phi: Conv2d,
    pub g: Conv2d,
    pub out: Conv2d,
}

/// Intermediate values of a [`GlobalLocal`] pass.
#[derive(Debug, Clone, Copy)]
pub struct GlobalLocalOutput {
    pub out: Var,
    /// Row-stochastic `B×N×N` correlation map over the `N = H·W` positions.
    pub attention: Var,
}

impl GlobalLocal {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "nonlocal_reduction {reduction} must divide the bottleneck width {channels}"
            )));
        }
        let inner = channels / reduction;
        Ok(Self {
            theta: b.conv("theta", 1, channels, inner)?,
            phi: b.conv("phi", 1, channels, inner)?,
            g: b.conv("g", 1, channels, inner)?,
            out: b.conv("out", 1, inner, channels)?,
        })
    }

    pub fn forward_detailed<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
    ) -> Result<GlobalLocalOutput> {
        let (b, h, w, _) = g.value(x).dims4("global_local")?;
        let inner = self.theta.out_c;
        let n = h * w;
        let theta = self.theta.forward(g, p, x)?;
        let theta = g.reshape(theta, &[b, n, inner])?;
        let phi = self.phi.forward(g, p, x)?;
        let phi = g.reshape(phi, &[b, n, inner])?;
        let phi_t = g.transpose(phi)?;
        let values = self.g.forward(g, p, x)?;
        let values = g.reshape(values, &[b, n, inner])?;

        let scores = g.matmul(theta, phi_t)?;
        let attention = g.softmax(scores);
        let y = g.matmul(attention, values)?;
        let y = g.reshape(y, &[b, h, w, inner])?;
        let projected = self.out.forward(g, p, y)?;
        let out = g.add(x, projected)?;
        Ok(GlobalLocalOutput { out, attention })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(g, p, x)?.out)
    }

    pub fn param_count(channels: usize, reduction: usize) -> usize {
        let inner = channels / reduction;
        3 * conv_params(1, channels, inner) + conv_params(1, inner, channels)
    }
}
