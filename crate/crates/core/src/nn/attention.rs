//! Channel, pixel and dual attention.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nn::params::{conv_params, Bound, Conv2d, ParamBuilder};
use crate::ops::{PoolAxis, PoolMode};
use crate::tensor::Element;

/// Per-channel mask `sigmoid(conv1×1(GAP_spatial(x)))`, shape `B×1×1×C`.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub conv: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Element>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: b.conv("conv", 1, channels, channels)?,
        })
    }

    pub fn mask<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let pooled = g.pool_global(x, PoolMode::Avg, PoolAxis::Spatial)?;
        let logits = self.conv.forward(g, p, pooled)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mask = self.mask(g, p, x)?;
        g.mul_broadcast(x, mask)
    }

    pub fn param_count(channels: usize) -> usize {
        conv_params(1, channels, channels)
    }
}

/// Per-pixel mask from channel-wise average and max pooling, shape `B×H×W×1`.
#[derive(Debug, Clone)]
pub struct PixelAttention {
    pub conv: Conv2d,
}

impl PixelAttention {
    pub fn new<T: Element>(b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        Ok(Self {
            conv: b.conv("conv", 1, 2, 1)?,
        })
    }

    pub fn mask<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let avg = g.pool_global(x, PoolMode::Avg, PoolAxis::Channel)?;
        let max = g.pool_global(x, PoolMode::Max, PoolAxis::Channel)?;
        let pooled = g.concat(&[avg, max])?;
        let logits = self.conv.forward(g, p, pooled)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mask = self.mask(g, p, x)?;
        g.mul_broadcast(x, mask)
    }

    pub fn param_count() -> usize {
        conv_params(1, 2, 1)
    }
}

/// Two 3×3 conv+ReLU layers, pixel and channel attention in parallel,
/// concatenated and fused back to the input width by a 1×1 conv.
#[derive(Debug, Clone)]
pub struct DualAttention {
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub pixel: PixelAttention,
    pub channel: ChannelAttention,
    pub fuse: Conv2d,
}

impl DualAttention {
    /// `in_c` is restored at the output; `width` is the internal width.
    pub fn new<T: Element>(b: &mut ParamBuilder<'_, T>, in_c: usize, width: usize) -> Result<Self> {
        Ok(Self {
            conv_a: b.conv("conv_a", 3, in_c, width)?,
            conv_b: b.conv("conv_b", 3, width, width)?,
            pixel: PixelAttention::new(&mut b.scope("pixel"))?,
            channel: ChannelAttention::new(&mut b.scope("channel"), width)?,
            fuse: b.conv("fuse", 1, 2 * width, in_c)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let t = self.conv_a.forward(g, p, x)?;
        let t = g.relu(t);
        let t = self.conv_b.forward(g, p, t)?;
        let t = g.relu(t);
        let pixel = self.pixel.forward(g, p, t)?;
        let channel = self.channel.forward(g, p, t)?;
        let both = g.concat(&[pixel, channel])?;
        self.fuse.forward(g, p, both)
    }

    pub fn param_count(in_c: usize, width: usize) -> usize {
        conv_params(3, in_c, width)
            + conv_params(3, width, width)
            + PixelAttention::param_count()
            + ChannelAttention::param_count(width)
            + conv_params(1, 2 * width, in_c)
    }
}
