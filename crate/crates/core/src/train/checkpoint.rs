//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ATTSFCK\0" | version u32 | config digest [32]
//! config_len u32 | config text (canonical ModelConfig)
//! phase u8 | epoch u64 | step u64 | adam_step u64
//! rng seed u64 | rng stream u64 | rng word_pos u128
//! record_count u32
//! record*: name_len u32 | name | dtype u8 | rank u32 | extents u64* | payload
//! ```
//!
//! Record names are `param/<name>`, `adam.m/<name>`, `adam.v/<name>` and
//! `sgd.v/<name>`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{AttsfModel, ModelConfig, ParamStore};
use crate::rng::RngSnapshot;
use crate::tensor::{DType, Tensor};

pub const MAGIC: [u8; 8] = *b"ATTSFCK\0";
pub const VERSION: u32 = 1;

pub const PARAM_PREFIX: &str = "param/";
pub const ADAM_M_PREFIX: &str = "adam.m/";
pub const ADAM_V_PREFIX: &str = "adam.v/";
pub const SGD_V_PREFIX: &str = "sgd.v/";

/// Position in the two-phase schedule. `epoch` counts completed epochs of
/// `phase`; `step` counts optimizer steps over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub phase: u8,
    pub epoch: u64,
    pub step: u64,
}

impl Progress {
    pub const START: Progress = Progress {
        phase: 1,
        epoch: 0,
        step: 0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub progress: Progress,
    pub rng: RngSnapshot,
    pub adam_step: u64,
    pub records: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn digest(&self) -> [u8; 32] {
        self.config.digest()
    }

    /// Tensors whose record name starts with `prefix`, in file order, with
    /// the prefix stripped.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> + 'a {
        self.records
            .iter()
            .filter_map(move |(name, t)| name.strip_prefix(prefix).map(|n| (n, t)))
    }

    pub fn params(&self) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, t) in self.with_prefix(PARAM_PREFIX) {
            store.insert(name.to_string(), t.clone())?;
        }
        Ok(store)
    }

    pub fn model(&self) -> Result<AttsfModel<f32>> {
        AttsfModel::from_params(&self.config, self.params()?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.canonical();
        let payload: usize = self
            .records
            .iter()
            .map(|(n, t)| n.len() + 9 + 8 * t.rank() + 4 * t.len())
            .sum();
        let mut out = Vec::with_capacity(128 + config.len() + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.push(self.progress.phase);
        out.extend_from_slice(&self.progress.epoch.to_le_bytes());
        out.extend_from_slice(&self.progress.step.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DType::F32.tag());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.corrupt_at(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let config_len = r.u32()? as usize;
        let config_at = r.pos;
        let text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| r.corrupt_at(config_at, "model config is not UTF-8"))?;
        let stored: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        if stored != digest {
            return Err(r.corrupt_at(config_at, "model config does not match its digest"));
        }
        let config = ModelConfig::from_canonical(text)
            .map_err(|e| r.corrupt_at(config_at, &format!("model config: {e}")))?;
        let phase_at = r.pos;
        let phase = r.take(1)?[0];
        if !(1..=2).contains(&phase) {
            return Err(r.corrupt_at(phase_at, &format!("phase {phase} is not 1 or 2")));
        }
        let progress = Progress {
            phase,
            epoch: r.u64()?,
            step: r.u64()?,
        };
        let adam_step = r.u64()?;
        let rng = RngSnapshot {
            seed: r.u64()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
        };
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            records.push(r.record()?);
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, &format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            progress,
            rng,
            adam_step,
            records,
        })
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a half-written checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks that the checkpoint was written for `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig, force: bool) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if !force && ckpt.digest() != expected.digest() {
            return Err(Error::DigestMismatch);
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, reason: &str) -> Error {
        Error::CorruptCheckpoint {
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(self.corrupt_at(
                self.pos,
                &format!("truncated: needed {n} bytes, {remaining} left"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let start = self.pos;
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| self.corrupt_at(start, "record name is not UTF-8"))?
            .to_string();
        let tag_at = self.pos;
        let tag = self.take(1)?[0];
        if DType::from_tag(tag) != Some(DType::F32) {
            return Err(self.corrupt_at(
                tag_at,
                &format!("record `{name}` has unsupported dtype tag {tag}"),
            ));
        }
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.corrupt_at(tag_at + 1, &format!("record `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.corrupt_at(tag_at, &format!("record `{name}` extents overflow")))?;
        let data = self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor =
            Tensor::new(shape, data).map_err(|e| self.corrupt_at(tag_at, &e.to_string()))?;
        Ok((name, tensor))
    }
}
