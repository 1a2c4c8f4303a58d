//! Training loop, schedules, run records and the multi-seed experiment driver.

mod config;
mod experiment;
mod trainer;

pub use config::{anneal_linear, DatasetSpec, ExperimentConfig, ModelKind, Sampling, TrainConfig, CONFIG_KEYS};
pub use experiment::{welch_one_sided, ExperimentPlan, MethodSpec, RunSummary, WelchResult};
pub use trainer::{RunRecord, RunRow, Trainer, RUN_CSV_HEADER};
