//! Experiment configuration, training runs, sweeps and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod sweep;
pub mod trace;

pub use config::{ExperimentConfig, InitMode};
pub use run::{finetune, pretrain, FinetuneOutput, Pretrained, RunRecord, RunSummary};
pub use trace::{TraceRow, TraceSink, TrainingTrace};
