//! Experiment orchestration for the neural TD laboratory: config documents,
//! parallel sweeps and the CSV/JSON artifacts they leave behind.

pub mod diagnose;
pub mod error;
pub mod experiment;
pub mod figure1;
pub mod oracle;
pub mod output;
pub mod setup;
pub mod spec;

pub use diagnose::diagnose;
pub use error::{Result, RunnerError};
pub use experiment::{run_experiment, ResultBundle};
pub use figure1::replicate_figure1;
pub use oracle::run_oracle;
pub use spec::ExperimentSpec;
