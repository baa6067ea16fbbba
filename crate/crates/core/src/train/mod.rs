//! Two-phase training: Adam pre-training, then SGD fine-tuning with a
//! halving learning rate, plus checkpoints and the metrics log.

pub mod checkpoint;
pub mod optim;
pub mod trainer;

pub use checkpoint::{Checkpoint, Progress};
pub use optim::{adam_step, lr_schedule, sgd_step, step_decay, AdamConfig, AdamState, SgdState};
pub use trainer::{
    checkpoint_file_name, train, EpochRecord, EpochStats, OptimizerKind, PhaseConfig, TrainConfig,
    Trainer, ValMetrics, METRICS_FILE, METRICS_HEADER,
};
