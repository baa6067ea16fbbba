use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::params::{conv_params, Bound, Conv2d, ParamBuilder};
use crate::tensor::Element;

/// Nearest ×2 upsampling + 3×3 conv, concatenation with both encoder skips,
/// then two 3×3 conv + leaky-ReLU layers.
#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub level: usize,
    pub up: Conv2d,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub slope: f64,
}

impl DecoderLevel {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        level: usize,
        bottom_c: usize,
        width: usize,
        slope: f64,
    ) -> Result<Self> {
        Ok(Self {
            level,
            up: b.conv("up", 3, bottom_c, width)?,
            conv_a: b.conv("conv_a", 3, 3 * width, width)?,
            conv_b: b.conv("conv_b", 3, width, width)?,
            slope,
        })
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        bottom: Var,
        skip_left: Var,
        skip_right: Var,
    ) -> Result<Var> {
        let (_, bh, bw, _) = g.value(bottom).dims4("decoder")?;
        for (side, skip) in [("left", skip_left), ("right", skip_right)] {
            let (_, sh, sw, sc) = g.value(skip).dims4("decoder")?;
            if sh != 2 * bh || sw != 2 * bw || sc != self.up.out_c {
                return Err(Error::invalid(
                    "decoder",
                    format!(
                        "level {}: {side} skip is {sh}×{sw}×{sc}, expected {}×{}×{}",
                        self.level,
                        2 * bh,
                        2 * bw,
                        self.up.out_c
                    ),
                ));
            }
        }
        let u = g.upsample_nearest(bottom, 2)?;
        let u = self.up.forward(g, p, u)?;
        let cat = g.concat(&[u, skip_left, skip_right])?;
        let t = self.conv_a.forward(g, p, cat)?;
        let t = g.leaky_relu(t, self.slope);
        let t = self.conv_b.forward(g, p, t)?;
        Ok(g.leaky_relu(t, self.slope))
    }

    pub fn param_count(bottom_c: usize, width: usize) -> usize {
        conv_params(3, bottom_c, width)
            + conv_params(3, 3 * width, width)
            + conv_params(3, width, width)
    }
}
