//! Gaze model, training loop, evaluation and feature export.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod export;
pub mod model;
pub mod plot;
pub mod setup;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{BankSource, EncoderConfig, ModelConfig, RankObjective, TrainConfig};
pub use dataset::{compute_targets, BankSet, GazeDataset, GazeSample};
pub use eval::{evaluate, evaluate_checkpoint, EvalReport};
pub use export::{export_features, read_export, similarity_spearman, ExportRecord};
pub use model::{ForwardOutput, GazeModel};
pub use setup::{build_banks, frozen_encoders, load_factors, FrozenEncoders};
pub use synth::{make_synthetic, make_synthetic_dataset, NuisancePlanter, SyntheticGaze, SyntheticGazeSpec};
pub use train::{train, train_step, Batch, EpochRecord, PreparedBanks, StepMetrics, TrainInputs, TrainOutcome, TrainState};
