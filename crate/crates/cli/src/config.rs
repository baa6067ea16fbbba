//! Run configuration read from TOML.
//!
//! Keys are flat dotted paths such as `model.levels` or
//! `train.phase2.loss.alpha`; nested tables spell the same paths. Missing
//! keys keep their defaults. Every problem is collected with its path
//! before anything is reported.

use std::fs;
use std::path::Path;

use attsf::data::{DepthMap, PatchSpec, SynthConfig};
use attsf::loss::LossConfig;
use attsf::nn::ModelConfig;
use attsf::train::{OptimizerKind, PhaseConfig, TrainConfig};
use toml::{Table, Value};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub patch: PatchSpec,
    pub synth: SynthConfig,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text =
            fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| vec![e.message().to_string()])?;
        let mut leaves = Vec::new();
        flatten("", &table, &mut leaves);
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        for (path, value) in &leaves {
            if let Err(msg) = cfg.set(path, value) {
                problems.push(format!("{path}: {msg}"));
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    fn set(&mut self, path: &str, v: &Value) -> Result<(), String> {
        let parts: Vec<&str> = path.split('.').collect();
        match parts.as_slice() {
            ["model", key] => return set_model(&mut self.model, key, v),
            ["train", "seed"] => self.train.seed = uint(v)?,
            ["train", "checkpoint_every"] => self.train.checkpoint_every = size(v)?,
            ["train", "augment"] => self.train.augment = boolean(v)?,
            ["train", "adam", "beta1"] => self.train.adam.beta1 = float(v)?,
            ["train", "adam", "beta2"] => self.train.adam.beta2 = float(v)?,
            ["train", "adam", "eps"] => self.train.adam.eps = float(v)?,
            ["train", "phase1", rest @ ..] => return set_phase(&mut self.train.phase1, rest, v),
            ["train", "phase2", rest @ ..] => return set_phase(&mut self.train.phase2, rest, v),
            ["patch", "size"] => self.patch.size = size(v)?,
            ["patch", "stride"] => self.patch.stride = size(v)?,
            ["synth", "max_blur_radius"] => self.synth.max_blur_radius = float(v)?,
            ["synth", "depth"] => self.synth.depth_map = depth(v)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Cross-field checks on an otherwise well-typed config.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .model
            .problems()
            .into_iter()
            .map(|p| format!("model.{p}"))
            .collect();
        out.extend(self.train.problems());
        if self.patch.size == 0 {
            out.push("patch.size: must be at least 1".into());
        } else if (1..=16).contains(&self.model.levels)
            && !self.patch.size.is_multiple_of(self.model.size_multiple())
        {
            out.push(format!(
                "patch.size: must be a multiple of {} for a {}-level model, got {}",
                self.model.size_multiple(),
                self.model.levels,
                self.patch.size
            ));
        }
        if self.patch.stride == 0 || self.patch.stride > self.patch.size {
            out.push(format!(
                "patch.stride: must be in 1..={}, got {}",
                self.patch.size, self.patch.stride
            ));
        }
        out.extend(synth_problems(&self.synth));
        out
    }
}

pub fn synth_problems(cfg: &SynthConfig) -> Vec<String> {
    let mut out = Vec::new();
    if !(cfg.max_blur_radius.is_finite() && cfg.max_blur_radius >= 0.0) {
        out.push(format!(
            "synth.max_blur_radius: must be finite and non-negative, got {}",
            cfg.max_blur_radius
        ));
    }
    if let DepthMap::Constant(d) = cfg.depth_map {
        if !(0.0..=1.0).contains(&d) {
            out.push(format!(
                "synth.depth: constant depth must lie in [0, 1], got {d}"
            ));
        }
    }
    out
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            Value::Table(inner) => flatten(&path, inner, out),
            leaf => out.push((path, leaf.clone())),
        }
    }
}

fn set_model(m: &mut ModelConfig, key: &str, v: &Value) -> Result<(), String> {
    match key {
        "levels" => m.levels = size(v)?,
        "base_channels" => m.base_channels = size(v)?,
        "nonlocal_reduction" => m.nonlocal_reduction = size(v)?,
        "output_channels" => m.output_channels = size(v)?,
        "leaky_slope" => m.leaky_slope = float(v)?,
        "triple_local_kernels" => {
            let items = v
                .as_array()
                .ok_or_else(|| format!("expected an array of integers, got {v}"))?;
            m.triple_local_kernels = items.iter().map(size).collect::<Result<_, _>>()?;
        }
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

fn set_phase(p: &mut PhaseConfig, rest: &[&str], v: &Value) -> Result<(), String> {
    match rest {
        ["optimizer"] => {
            let name = v
                .as_str()
                .ok_or_else(|| format!("expected \"adam\" or \"sgd\", got {v}"))?;
            p.optimizer = OptimizerKind::parse(name)
                .ok_or_else(|| format!("expected \"adam\" or \"sgd\", got {v}"))?;
        }
        ["lr"] => p.lr = float(v)?,
        ["batch"] => p.batch = size(v)?,
        ["epochs"] => p.epochs = size(v)?,
        ["lr_half_every"] => p.lr_half_every = size(v)?,
        ["momentum"] => p.momentum = float(v)?,
        ["loss", key] => set_loss(&mut p.loss, key, v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

fn set_loss(l: &mut LossConfig, key: &str, v: &Value) -> Result<(), String> {
    match key {
        "alpha" => l.alpha = float(v)?,
        "beta" => l.beta = float(v)?,
        "ssim_window" => l.ssim_window = size(v)?,
        "ssim_sigma" => l.ssim_sigma = float(v)?,
        "ssim_k1" => l.ssim_k1 = float(v)?,
        "ssim_k2" => l.ssim_k2 = float(v)?,
        "dynamic_range" => l.dynamic_range = float(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

fn float(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(format!("expected a number, got {v}")),
    }
}

fn uint(v: &Value) -> Result<u64, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(format!("expected a non-negative integer, got {v}")),
    }
}

fn size(v: &Value) -> Result<usize, String> {
    uint(v).and_then(|u| usize::try_from(u).map_err(|_| format!("{u} is too large")))
}

fn boolean(v: &Value) -> Result<bool, String> {
    v.as_bool()
        .ok_or_else(|| format!("expected true or false, got {v}"))
}

fn depth(v: &Value) -> Result<DepthMap, String> {
    match v {
        Value::String(s) if s == "random" => Ok(DepthMap::RandomSmooth),
        Value::Float(_) | Value::Integer(_) => Ok(DepthMap::Constant(float(v)?)),
        _ => Err(format!(
            "expected \"random\" or a constant depth in [0, 1], got {v}"
        )),
    }
}
