//! Losses, checkpoints, the training loop, metrics and evaluation.

mod checkpoint;
mod eval;
mod loss;
pub mod metrics;
mod trainer;

pub use crate::numerics::Adam;
pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use eval::{evaluate, EvalReport, IdentityRestorer, ImageScore, OracleRestorer, RecipeSummary, Restore};
pub use loss::{loss_total, perceptual_proxy};
pub use metrics::{psnr, ssim};
pub use trainer::{LossRecord, TrainConfig, TrainPair, Trainer, TRAIN_KEYS};
