//! ATTSF: a dual-pixel defocus deblurring network built on a small
//! reverse-mode autodiff engine.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`ops`], [`graph`]: dense tensors, kernels and the tape.
//! * [`nn`]: attention encoders, triple-local and global-local bottleneck,
//!   skip-connected decoder.
//! * [`loss`]: SSIM/MAE composite loss and the PSNR/SSIM/MAE metrics.
//! * [`data`]: dataset loading, patching, augmentation and the synthetic
//!   dual-pixel blur generator.
//! * [`train`]: optimizers, learning-rate schedule, checkpoints and the
//!   two-phase trainer.

pub mod data;
pub mod error;
pub mod graph;
pub mod init;
pub mod loss;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use rng::RngState;
pub use tensor::{DType, Element, Tensor};
