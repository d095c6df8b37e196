//! Configuration-driven experiment harness: training runs with per-seed
//! metrics, checkpoint evaluation and oracle verification reports.

pub mod config;
pub mod error;
pub mod oracle_check;
pub mod run;

pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use oracle_check::{run_oracle_check, OracleReport};
pub use run::{run_eval, run_train, EvalReport, TrainSummary, OUTPUT_DIR_ENV};
