//! Experiment orchestration for CSI fingerprinting: dataset generation,
//! training variants, evaluation reports, ablations and the distance study.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod distances;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod svg;

pub use ablation::{run_ablation, AblationTable};
pub use commands::{run, Cli};
pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, Result};
pub use metrics::{run_eval, Classifier, MetricsReport};
pub use pipeline::Variant;
