//! Experiment harness for nested attributions: JSON-configured grids over
//! perturbation budgets, seeds and methods, with CSV/JSON artifacts.
//!
//! Results are a pure function of the config. Samples run in parallel, but
//! each draws from RNG streams keyed by `(seed, sample_id)` and rows are
//! written in task order by a single writer.

pub mod config;
pub mod experiment;
pub mod scaling;

pub use config::{ExperimentConfig, GridConfig, Method, OracleConfig, ScalingConfig};
pub use experiment::{estimate, evaluate, run_experiment, CellAggregate, ExperimentSummary, Hyper, SampleRecord, Stat};
pub use scaling::{linear_fit, run_scaling, LinearFit, ScalingReport, ScalingRow};
