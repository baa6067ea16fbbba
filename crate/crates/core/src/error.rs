use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two axes that must agree do not.
    #[error("{op}: {lhs_axis} ({lhs}) does not match {rhs_axis} ({rhs})")]
    AxisMismatch {
        op: &'static str,
        lhs_axis: String,
        lhs: usize,
        rhs_axis: String,
        rhs: usize,
    },

    #[error("{op}: incompatible shapes {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sample `{stem}`: missing {missing} image")]
    MissingCounterpart { stem: String, missing: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: usize, reason: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint was written for a different model config")]
    DigestMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn axes(
        op: &'static str,
        lhs_axis: impl Into<String>,
        lhs: usize,
        rhs_axis: impl Into<String>,
        rhs: usize,
    ) -> Self {
        Error::AxisMismatch {
            op,
            lhs_axis: lhs_axis.into(),
            lhs,
            rhs_axis: rhs_axis.into(),
            rhs,
        }
    }
}
