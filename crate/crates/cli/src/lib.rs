//! Config-driven experiments on top of `cgluon`.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod selftest;

pub use compare::{compare, units_to_threshold, Reach};
pub use config::ExperimentConfig;
pub use experiment::{run_experiment, CSV_HEADER};
