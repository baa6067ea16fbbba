use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::attention::DualAttention;
use crate::nn::params::{conv_params, Bound, Conv2d, ParamBuilder};
use crate::tensor::Element;

/// Dual attention followed by two 3×3 conv+ReLU layers and 2×2 max pooling.
#[derive(Debug, Clone)]
pub struct AttentionEncoderLevel {
    pub level: usize,
    pub attention: DualAttention,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
}

/// Output of one encoder level.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Full-resolution feature handed to the decoder.
    pub skip: Var,
    /// Half-resolution feature fed to the next level.
    pub down: Var,
}

impl AttentionEncoderLevel {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        level: usize,
        in_c: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            level,
            attention: DualAttention::new(&mut b.scope("attention"), in_c, width)?,
            conv_a: b.conv("conv_a", 3, in_c, width)?,
            conv_b: b.conv("conv_b", 3, width, width)?,
        })
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
    ) -> Result<EncoderOutput> {
        let (_, h, w, _) = g.value(x).dims4("attention_encoder")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(
                "attention_encoder",
                format!(
                    "level {}: spatial extent {h}×{w} is not divisible by 2",
                    self.level
                ),
            ));
        }
        let t = self.attention.forward(g, p, x)?;
        let t = self.conv_a.forward(g, p, t)?;
        let t = g.relu(t);
        let t = self.conv_b.forward(g, p, t)?;
        let skip = g.relu(t);
        let down = g.maxpool2d(skip, 2, 2)?;
        Ok(EncoderOutput { skip, down })
    }

    pub fn param_count(in_c: usize, width: usize) -> usize {
        DualAttention::param_count(in_c, width)
            + conv_params(3, in_c, width)
            + conv_params(3, width, width)
    }
}
