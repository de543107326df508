//! Training, evaluation, ablation and post-processing built on the model modules.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod gradsuite;
pub mod manifest;
pub mod model;
pub mod plotdata;
pub mod smooth;
pub mod train;

pub use ablate::{ablate, AblationData, AblationTable, Variant};
pub use checkpoint::Checkpoint;
pub use config::{DataPaths, OptimizerConfig, RunConfig, ScheduleConfig};
pub use evaluate::{
    evaluate, evaluate_predictions, ground_truth_predictions, predict, Predictions, WindowRef,
};
pub use manifest::Manifest;
pub use model::TemporalModel;
pub use smooth::{smooth_predictions, smooth_sequence};
pub use train::{train, PlateauSchedule, TrainOutcome, Trainer};
