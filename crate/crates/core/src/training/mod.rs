//! Configuration, optimizer, the three-path step and the run loop.

pub mod config;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod run;
pub mod step;

pub use config::{AdamWConfig, Arm, DataSource, ExperimentConfig};
pub use model::{PathState, TriadModel};
pub use optim::{adamw_update, OptimizerState};
pub use pipeline::{evaluate_path, fold_split, FoldSplit, Pipeline, PrepSettings};
pub use run::{evaluate_checkpoint, load_dataset, run_summary, train, train_on, EpochRecord, Evaluation, RunOptions, RunResult, StepRecord};
pub use step::{step_gradients, triad_step, HalfBatch, StepInput, StepSettings};
