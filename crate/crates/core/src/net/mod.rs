//! Trainable score model, its losses, training loop and checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{dsm_loss, dsm_loss_grad, mismatch_pit_loss, mismatch_pit_loss_grad, PitLoss};
pub use mlp::{MlpScoreModel, ModelSpec, Preconditioning};
pub use train::{evaluate_dsm, BranchCounters, Optimizer, StepStats, TrainConfig, Trainer};
