//! The assembled network: two untied attention-encoder stacks, a
//! triple-local / global-local bottleneck run in parallel, and a decoder fed
//! by both streams' skips at every level.

use sha2::{Digest, Sha256};

use crate::data::image::{crop, pad_reflect};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::bottleneck::{GlobalLocal, TripleLocal};
use crate::nn::decoder::DecoderLevel;
use crate::nn::encoder::AttentionEncoderLevel;
use crate::nn::params::{conv_params, Bound, Conv2d, ParamBuilder, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

/// Channels of every input image.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Encoder/decoder depth.
    pub levels: usize,
    /// Width of level 0; doubled at each deeper level.
    pub base_channels: usize,
    pub triple_local_kernels: Vec<usize>,
    pub nonlocal_reduction: usize,
    pub leaky_slope: f64,
    pub output_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 32,
            triple_local_kernels: vec![1, 3, 5],
            nonlocal_reduction: 2,
            leaky_slope: 0.2,
            output_channels: 3,
        }
    }
}

impl ModelConfig {
    /// A reduced configuration for desk-scale runs.
    pub fn toy(levels: usize, base_channels: usize) -> Self {
        Self {
            levels,
            base_channels,
            ..Self::default()
        }
    }

    /// Feature width at encoder/decoder `level`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Width after concatenating both streams' deepest features.
    pub fn bottleneck_channels(&self) -> usize {
        2 * self.width(self.levels - 1)
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.levels == 0 {
            out.push("levels: must be at least 1".to_string());
        }
        if self.levels > 16 {
            out.push(format!(
                "levels: {} is unreasonably deep (max 16)",
                self.levels
            ));
        }
        if self.base_channels == 0 {
            out.push("base_channels: must be at least 1".to_string());
        }
        if self.triple_local_kernels.is_empty() {
            out.push("triple_local_kernels: must not be empty".to_string());
        }
        if let Some(k) = self.triple_local_kernels.iter().find(|k| *k % 2 == 0) {
            out.push(format!(
                "triple_local_kernels: kernel sizes must be odd, found {k}"
            ));
        }
        if self.output_channels == 0 {
            out.push("output_channels: must be at least 1".to_string());
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            out.push(format!(
                "leaky_slope: must be finite and non-negative, got {}",
                self.leaky_slope
            ));
        }
        if (1..=16).contains(&self.levels) && self.base_channels > 0 {
            let c = self.bottleneck_channels();
            if self.nonlocal_reduction == 0 || !c.is_multiple_of(self.nonlocal_reduction) {
                out.push(format!(
                    "nonlocal_reduction: {} must divide the bottleneck width {c}",
                    self.nonlocal_reduction
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let per_stream: usize = (0..self.levels)
            .map(|l| {
                let in_c = if l == 0 {
                    IMAGE_CHANNELS
                } else {
                    self.width(l - 1)
                };
                AttentionEncoderLevel::param_count(in_c, self.width(l))
            })
            .sum();
        let c = self.bottleneck_channels();
        let bottleneck = TripleLocal::param_count(c, &self.triple_local_kernels)
            + GlobalLocal::param_count(c, self.nonlocal_reduction)
            + conv_params(1, 2 * c, c);
        let decoder: usize = (0..self.levels)
            .map(|l| {
                let bottom = if l + 1 == self.levels {
                    c
                } else {
                    self.width(l + 1)
                };
                DecoderLevel::param_count(bottom, self.width(l))
            })
            .sum();
        let head = conv_params(3, self.width(0), self.output_channels);
        2 * per_stream + bottleneck + decoder + head
    }

    /// Stable textual form, used for checkpoint headers and digests.
    pub fn canonical(&self) -> String {
        let kernels: Vec<String> = self
            .triple_local_kernels
            .iter()
            .map(usize::to_string)
            .collect();
        format!(
            "levels={}\nbase_channels={}\ntriple_local_kernels={}\nnonlocal_reduction={}\nleaky_slope={}\noutput_channels={}\n",
            self.levels,
            self.base_channels,
            kernels.join(","),
            self.nonlocal_reduction,
            self.leaky_slope,
            self.output_channels
        )
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let bad = |line: &str| Error::Config(format!("bad model config line `{line}`"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
            match key {
                "levels" => cfg.levels = value.parse().map_err(|_| bad(line))?,
                "base_channels" => cfg.base_channels = value.parse().map_err(|_| bad(line))?,
                "triple_local_kernels" => {
                    cfg.triple_local_kernels = value
                        .split(',')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(line))?
                }
                "nonlocal_reduction" => {
                    cfg.nonlocal_reduction = value.parse().map_err(|_| bad(line))?
                }
                "leaky_slope" => cfg.leaky_slope = value.parse().map_err(|_| bad(line))?,
                "output_channels" => cfg.output_channels = value.parse().map_err(|_| bad(line))?,
                _ => return Err(bad(line)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

/// Layer structure of the network; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Attsf {
    pub config: ModelConfig,
    pub left: Vec<AttentionEncoderLevel>,
    pub right: Vec<AttentionEncoderLevel>,
    pub triple_local: TripleLocal,
    pub global_local: GlobalLocal,
    pub fuse: Conv2d,
    /// Indexed by level; run from the deepest level up.
    pub decoder: Vec<DecoderLevel>,
    pub head: Conv2d,
}

impl Attsf {
    fn build<T: Element>(config: &ModelConfig, b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        config.validate()?;
        let mut streams = Vec::with_capacity(2);
        for side in ["left", "right"] {
            let mut scope = b.scope(side);
            let levels = (0..config.levels)
                .map(|l| {
                    let in_c = if l == 0 {
                        IMAGE_CHANNELS
                    } else {
                        config.width(l - 1)
                    };
                    AttentionEncoderLevel::new(
                        &mut scope.scope(&format!("enc{l}")),
                        l,
                        in_c,
                        config.width(l),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            streams.push(levels);
        }
        let right = streams.pop().expect("two streams");
        let left = streams.pop().expect("two streams");

        let c = config.bottleneck_channels();
        let triple_local = TripleLocal::new(
            &mut b.scope("triple_local"),
            c,
            &config.triple_local_kernels,
        )?;
        let global_local =
            GlobalLocal::new(&mut b.scope("global_local"), c, config.nonlocal_reduction)?;
        let fuse = b.conv("bottleneck_fuse", 1, 2 * c, c)?;

        let mut decoder = Vec::with_capacity(config.levels);
        for l in 0..config.levels {
            let bottom = if l + 1 == config.levels {
                c
            } else {
                config.width(l + 1)
            };
            decoder.push(DecoderLevel::new(
                &mut b.scope(&format!("dec{l}")),
                l,
                bottom,
                config.width(l),
                config.leaky_slope,
            )?);
        }
        let head = b.conv("head", 3, config.width(0), config.output_channels)?;
        Ok(Self {
            config: config.clone(),
            left,
            right,
            triple_local,
            global_local,
            fuse,
            decoder,
            head,
        })
    }

    /// Checks the input pair before any computation.
    pub fn check_inputs(&self, left: &[usize], right: &[usize]) -> Result<()> {
        if left != right {
            return Err(Error::ShapeMismatch {
                op: "attsf_forward",
                shapes: format!("left {left:?} vs right {right:?}"),
            });
        }
        let [_, h, w, c] = *left else {
            return Err(Error::invalid(
                "attsf_forward",
                format!("expected B×H×W×{IMAGE_CHANNELS} inputs, got {left:?}"),
            ));
        };
        if c != IMAGE_CHANNELS {
            return Err(Error::axes(
                "attsf_forward",
                "input channels",
                c,
                "image channels",
                IMAGE_CHANNELS,
            ));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::invalid(
                "attsf_forward",
                format!("spatial extent {h}×{w} is not a multiple of {m} (2^levels)"),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        left: Var,
        right: Var,
    ) -> Result<Var> {
        self.check_inputs(g.value(left).shape(), g.value(right).shape())?;
        let mut skips = Vec::with_capacity(self.config.levels);
        let (mut l, mut r) = (left, right);
        for (enc_l, enc_r) in self.left.iter().zip(&self.right) {
            let out_l = enc_l.forward(g, p, l)?;
            let out_r = enc_r.forward(g, p, r)?;
            skips.push((out_l.skip, out_r.skip));
            l = out_l.down;
            r = out_r.down;
        }
        let bottom = g.concat(&[l, r])?;
        let local = self.triple_local.forward(g, p, bottom)?;
        let global = self.global_local.forward(g, p, bottom)?;
        let merged = g.concat(&[local, global])?;
        let mut x = self.fuse.forward(g, p, merged)?;
        for (dec, &(skip_l, skip_r)) in self.decoder.iter().zip(&skips).rev() {
            x = dec.forward(g, p, x, skip_l, skip_r)?;
        }
        let y = self.head.forward(g, p, x)?;
        Ok(g.sigmoid(y))
    }
}

/// Architecture plus parameter values.
#[derive(Debug, Clone)]
pub struct AttsfModel<T> {
    pub arch: Attsf,
    pub params: ParamStore<T>,
}

impl<T: Element> AttsfModel<T> {
    /// Builds the network with He-normal kernels and zero biases.
    pub fn new(config: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = Attsf::build(config, &mut ParamBuilder::new(&mut params, rng))?;
        Ok(Self { arch, params })
    }

    /// Rebuilds the architecture around existing parameter values, checking
    /// that names and shapes line up.
    pub fn from_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut fresh = Self::new(config, &mut RngState::new(0))?;
        if fresh.params.names() != params.names() {
            return Err(Error::Config(
                "parameter names do not match the model config".into(),
            ));
        }
        for id in fresh.params.ids() {
            if fresh.params.get(id).shape() != params.get(id).shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    params.name(id),
                    params.get(id).shape(),
                    fresh.params.get(id).shape()
                )));
            }
        }
        fresh.params = params;
        Ok(fresh)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, left: Var, right: Var) -> Result<Var> {
        self.arch.forward(g, p, left, right)
    }

    /// Forward pass on plain tensors.
    pub fn infer(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        self.arch.check_inputs(left.shape(), right.shape())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let l = g.constant(left.clone());
        let r = g.constant(right.clone());
        let y = self.forward(&mut g, &p, l, r)?;
        Ok(g.value(y).clone())
    }

    /// Deblurs one `H×W×3` view pair of any size: both views are
    /// reflect-padded on the bottom and right to the next multiple of
    /// `2^levels`, run as a batch of one, and the output is cropped back.
    pub fn deblur(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        if left.shape() != right.shape() {
            return Err(Error::ShapeMismatch {
                op: "deblur",
                shapes: format!("left {:?} vs right {:?}", left.shape(), right.shape()),
            });
        }
        let [h, w, c] = *left.shape() else {
            return Err(Error::invalid(
                "deblur",
                format!("expected H×W×3 views, got {:?}", left.shape()),
            ));
        };
        let m = self.config().size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let batch = |view: &Tensor<T>| pad_reflect(view, ph, pw)?.reshape(vec![1, ph, pw, c]);
        let out = self.infer(&batch(left)?, &batch(right)?)?;
        let out_c = out.shape()[3];
        crop(&out.reshape(vec![ph, pw, out_c])?, 0, 0, h, w)
    }

    pub fn cast<U: Element>(&self) -> AttsfModel<U> {
        AttsfModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}
