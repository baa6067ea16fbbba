use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::data::{augment, Batch, DualPixelSample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{composite_loss, mae, psnr, ssim, LossConfig};
use crate::nn::AttsfModel;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::checkpoint::{
    Checkpoint, Progress, ADAM_M_PREFIX, ADAM_V_PREFIX, PARAM_PREFIX, SGD_V_PREFIX,
};
use crate::train::optim::{adam_step, step_decay, AdamConfig, AdamState, SgdState};

/// Header of the per-epoch metrics log.
pub const METRICS_HEADER: &str = "epoch,phase,lr,train_loss,val_psnr,val_ssim,val_mae";
pub const METRICS_FILE: &str = "metrics.csv";

/// Stream index of the trainer's generator relative to the run seed; the
/// model initializer uses the root stream.
const TRAINER_STREAM: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Halve the rate every this many epochs of the phase; 0 keeps it fixed.
    pub lr_half_every: usize,
    /// Heavy-ball momentum for SGD; ignored by Adam.
    pub momentum: f64,
    pub loss: LossConfig,
}

impl PhaseConfig {
    /// Adam pre-training on the MAE term alone.
    pub fn pretrain() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            batch: 4,
            epochs: 200,
            lr_half_every: 0,
            momentum: 0.0,
            loss: LossConfig::mae_only(),
        }
    }

    /// SGD fine-tuning on the composite SSIM + MAE loss.
    pub fn finetune() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            lr: 5e-5,
            batch: 2,
            epochs: 100,
            lr_half_every: 20,
            momentum: 0.0,
            loss: LossConfig::default(),
        }
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        step_decay(epoch as usize, self.lr, self.lr_half_every)
    }

    /// Every invalid field, each prefixed with `path`.
    pub fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            out.push(format!(
                "{path}.lr: must be a positive number, got {}",
                self.lr
            ));
        }
        if self.batch == 0 {
            out.push(format!("{path}.batch: must be at least 1"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            out.push(format!(
                "{path}.momentum: must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        out.extend(
            self.loss
                .problems()
                .into_iter()
                .map(|p| format!("{path}.loss.{p}")),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs of a phase (0: only at the
    /// end of each phase).
    pub checkpoint_every: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1: PhaseConfig::pretrain(),
            phase2: PhaseConfig::finetune(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 10,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn phase(&self, phase: u8) -> &PhaseConfig {
        if phase == 1 {
            &self.phase1
        } else {
            &self.phase2
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.phase1.problems("train.phase1");
        out.extend(self.phase2.problems("train.phase2"));
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) {
            out.push(format!("train.adam.beta1: must lie in [0, 1), got {beta1}"));
        }
        if !(0.0..1.0).contains(&beta2) {
            out.push(format!("train.adam.beta2: must lie in [0, 1), got {beta2}"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            out.push(format!("train.adam.eps: must be positive, got {eps}"));
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
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

/// One row of the metrics log. `epoch` is 1-based within its phase.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = match self.val {
            Some(v) => format!("{},{},{}", v.psnr, v.ssim, v.mae),
            None => ",,".to_string(),
        };
        format!(
            "{},{},{},{},{val}",
            self.epoch, self.phase, self.lr, self.train_loss
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub step_losses: Vec<f64>,
}

pub fn checkpoint_file_name(phase: u8, epoch: u64) -> String {
    format!("phase{phase}_epoch{epoch:04}.ckpt")
}

/// Owns the model and optimizer state for a two-phase run.
pub struct Trainer {
    model: AttsfModel<f32>,
    cfg: TrainConfig,
    rng: RngState,
    progress: Progress,
    adam: AdamState<f32>,
    sgd: SgdState<f32>,
}

impl Trainer {
    pub fn new(model: AttsfModel<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = RngState::new(cfg.seed).derive(TRAINER_STREAM);
        let adam = AdamState::new(&model.params, cfg.adam);
        let sgd = SgdState::new(&model.params, cfg.phase2.momentum);
        let mut trainer = Self {
            model,
            cfg,
            rng,
            progress: Progress::START,
            adam,
            sgd,
        };
        trainer.settle_phase();
        Ok(trainer)
    }

    /// Continues a run from `ckpt`; `cfg` should be the configuration the
    /// checkpoint was written under.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut trainer = Self::new(ckpt.model()?, cfg)?;
        trainer.rng = RngState::restore(ckpt.rng);
        trainer.progress = ckpt.progress;
        trainer.adam.step = ckpt.adam_step;
        restore_slots(ckpt, ADAM_M_PREFIX, &trainer.model, &mut trainer.adam.m)?;
        restore_slots(ckpt, ADAM_V_PREFIX, &trainer.model, &mut trainer.adam.v)?;
        if !trainer.sgd.velocity.is_empty() {
            restore_slots(
                ckpt,
                SGD_V_PREFIX,
                &trainer.model,
                &mut trainer.sgd.velocity,
            )?;
        }
        trainer.settle_phase();
        Ok(trainer)
    }

    pub fn model(&self) -> &AttsfModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> AttsfModel<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn finished(&self) -> bool {
        self.progress.phase == 2 && self.progress.epoch >= self.cfg.phase2.epochs as u64
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg
            .phase(self.progress.phase)
            .lr_at(self.progress.epoch)
    }

    /// Moves to the next phase once the current one has run all its epochs.
    fn settle_phase(&mut self) {
        if self.progress.phase == 1 && self.progress.epoch >= self.cfg.phase1.epochs as u64 {
            self.progress.phase = 2;
            self.progress.epoch = 0;
            self.sgd = SgdState::new(&self.model.params, self.cfg.phase2.momentum);
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let names = self.model.params.names();
        let mut records = Vec::new();
        let mut push = |prefix: &str, tensors: &[Tensor<f32>]| {
            for (n, t) in names.iter().zip(tensors) {
                records.push((format!("{prefix}{n}"), t.clone()));
            }
        };
        push(PARAM_PREFIX, self.model.params.tensors());
        push(ADAM_M_PREFIX, &self.adam.m);
        push(ADAM_V_PREFIX, &self.adam.v);
        push(SGD_V_PREFIX, &self.sgd.velocity);
        Checkpoint {
            config: self.model.config().clone(),
            progress: self.progress,
            rng: self.rng.snapshot(),
            adam_step: self.adam.step,
            records,
        }
    }

    /// One optimizer step on `batch` with the current phase's loss and rate.
    /// Returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let phase = self.cfg.phase(self.progress.phase).clone();
        let lr = self.current_lr();
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let left = g.constant(batch.left.clone());
        let right = g.constant(batch.right.clone());
        let target = g.constant(batch.target.clone());
        let pred = self.model.forward(&mut g, &p, left, right)?;
        let loss = composite_loss(&mut g, pred, target, &phase.loss)?;
        let value = f64::from(g.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.progress.step,
            });
        }
        let mut grads = g.backward(loss)?;
        let grads = p.collect(&mut grads);
        match phase.optimizer {
            OptimizerKind::Adam => adam_step(&mut self.model.params, &grads, &mut self.adam, lr)?,
            OptimizerKind::Sgd => self.sgd.step(&mut self.model.params, &grads, lr)?,
        }
        self.progress.step += 1;
        Ok(value)
    }

    /// One shuffled pass, entering the next phase first if the current one is
    /// complete. Batches follow the phase's size.
    pub fn run_epoch(&mut self, data: &[DualPixelSample]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.settle_phase();
        let batch_size = self.cfg.phase(self.progress.phase).batch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        let mut step_losses = Vec::with_capacity(order.len().div_ceil(batch_size));
        for chunk in order.chunks(batch_size) {
            let samples: Vec<DualPixelSample> = chunk
                .iter()
                .map(|&i| {
                    if self.cfg.augment {
                        augment(&data[i], &mut self.rng)
                    } else {
                        data[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&DualPixelSample> = samples.iter().collect();
            step_losses.push(self.train_step(&Batch::stack(&refs)?)?);
        }
        self.progress.epoch += 1;
        let mean_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
        Ok(EpochStats {
            mean_loss,
            step_losses,
        })
    }

    /// Mean PSNR/SSIM/MAE of the current model over `data`, or `None` when
    /// there is nothing to validate on.
    pub fn evaluate(&self, data: &[DualPixelSample]) -> Result<Option<ValMetrics>> {
        if data.is_empty() {
            return Ok(None);
        }
        let loss_cfg = &self.cfg.phase(self.progress.phase).loss;
        let mut sum = ValMetrics {
            psnr: 0.0,
            ssim: 0.0,
            mae: 0.0,
        };
        for s in data {
            let batch = Batch::stack(&[s])?;
            let pred = self.model.infer(&batch.left, &batch.right)?;
            sum.psnr += psnr(&pred, &batch.target)?;
            sum.ssim += ssim(&pred, &batch.target, loss_cfg)?;
            sum.mae += mae(&pred, &batch.target)?;
        }
        let n = data.len() as f64;
        Ok(Some(ValMetrics {
            psnr: sum.psnr / n,
            ssim: sum.ssim / n,
            mae: sum.mae / n,
        }))
    }

    /// Runs the remaining epochs of both phases. With `out_dir`, appends a
    /// row to the metrics log after every epoch and saves checkpoints every
    /// `checkpoint_every` epochs and at the end of each phase.
    pub fn run(
        &mut self,
        train: &[DualPixelSample],
        val: &[DualPixelSample],
        out_dir: Option<&Path>,
    ) -> Result<Vec<EpochRecord>> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut log = match out_dir {
            Some(dir) => Some(self.open_log(dir)?),
            None => None,
        };
        let mut records = Vec::new();
        while !self.finished() {
            let phase = self.progress.phase;
            let lr = self.current_lr();
            let stats = self.run_epoch(train)?;
            let record = EpochRecord {
                epoch: self.progress.epoch,
                phase,
                lr,
                train_loss: stats.mean_loss,
                val: self.evaluate(val)?,
            };
            info!(
                "phase {phase} epoch {} lr {lr} loss {:.6}{}",
                record.epoch,
                record.train_loss,
                record
                    .val
                    .map(|v| format!(
                        " val psnr {:.3} ssim {:.4} mae {:.5}",
                        v.psnr, v.ssim, v.mae
                    ))
                    .unwrap_or_default()
            );
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", record.csv_row())?;
                w.flush()?;
            }
            let phase_epochs = self.cfg.phase(phase).epochs as u64;
            let every = self.cfg.checkpoint_every as u64;
            let periodic = every > 0 && record.epoch.is_multiple_of(every);
            if let Some(dir) = out_dir.filter(|_| periodic || record.epoch == phase_epochs) {
                let path = dir.join(checkpoint_file_name(phase, record.epoch));
                self.checkpoint().save(&path)?;
                info!("saved {}", path.display());
            }
            records.push(record);
            self.settle_phase();
        }
        Ok(records)
    }

    fn open_log(&self, dir: &Path) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(dir)?;
        let path: PathBuf = dir.join(METRICS_FILE);
        let fresh = self.progress == Progress::START || !path.exists();
        let file = if fresh {
            File::create(&path)?
        } else {
            OpenOptions::new().append(true).open(&path)?
        };
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "{METRICS_HEADER}")?;
            w.flush()?;
        }
        Ok(w)
    }
}

fn restore_slots(
    ckpt: &Checkpoint,
    prefix: &str,
    model: &AttsfModel<f32>,
    slots: &mut [Tensor<f32>],
) -> Result<()> {
    let found: Vec<(&str, &Tensor<f32>)> = ckpt.with_prefix(prefix).collect();
    if found.is_empty() {
        return Ok(());
    }
    if found.len() != slots.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} `{prefix}` tensors for {} parameters",
            found.len(),
            slots.len()
        )));
    }
    for ((slot, (name, t)), expected) in slots.iter_mut().zip(found).zip(model.params.names()) {
        if name != expected || t.shape() != slot.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor `{prefix}{name}` does not match parameter `{expected}`"
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

/// Trains `model` on `train` for both phases, validating on `val` after
/// every epoch.
pub fn train(
    model: AttsfModel<f32>,
    train: &[DualPixelSample],
    val: &[DualPixelSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(AttsfModel<f32>, Vec<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let log = trainer.run(train, val, out_dir)?;
    Ok((trainer.into_model(), log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_two_phase_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.phase1.optimizer, OptimizerKind::Adam);
        assert_eq!(
            (cfg.phase1.lr, cfg.phase1.batch, cfg.phase1.epochs),
            (1e-4, 4, 200)
        );
        assert_eq!(cfg.phase2.optimizer, OptimizerKind::Sgd);
        assert_eq!(
            (cfg.phase2.lr, cfg.phase2.batch, cfg.phase2.epochs),
            (5e-5, 2, 100)
        );
        assert_eq!(cfg.phase2.lr_at(40), 1.25e-5);
        assert_eq!((cfg.phase2.loss.alpha, cfg.phase2.loss.beta), (1.0, 0.5));
        assert_eq!((cfg.phase1.loss.alpha, cfg.phase1.loss.beta), (0.0, 1.0));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn problems_carry_paths() {
        let mut cfg = TrainConfig::default();
        cfg.phase1.lr = 0.0;
        cfg.phase2.batch = 0;
        let problems = cfg.problems();
        assert!(problems.iter().any(|p| p.starts_with("train.phase1.lr")));
        assert!(problems.iter().any(|p| p.starts_with("train.phase2.batch")));
    }

    #[test]
    fn csv_row_leaves_missing_validation_blank() {
        let r = EpochRecord {
            epoch: 3,
            phase: 2,
            lr: 2.5e-5,
            train_loss: 0.125,
            val: None,
        };
        assert_eq!(r.csv_row(), "3,2,0.000025,0.125,,,");
    }
}
