//! Pretraining orchestration: configuration, augmentation, the training step,
//! optimizer and EMA updates, checkpoints and the metrics log.

pub mod augment;
mod checkpoint;
mod config;
mod optim;
mod run;
mod schedule;
mod step;
mod trainer;

pub use augment::{augment_pair, AugmentParams};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, sidecar_path, CheckpointRecord, OptimizerState};
pub use config::{DataConfig, DataSource, ExperimentConfig, MaskingStrategy, NegativeSource, TrainConfig};
pub use optim::{AdamW, AdamWParams};
pub use run::{checkpoint_path, epoch_layout, epoch_order, metrics_path, run_pretraining, RunOptions, RunSummary};
pub use schedule::lr_at;
pub use step::{forward_losses, prepare_batch, MetricsRow, PreparedBatch, PreparedSample, StepLosses};
pub use trainer::Trainer;
