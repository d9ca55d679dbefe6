//! Experiment driver: configuration, error metrics, reports and field export.

pub mod check;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod vtk;

pub use config::{ExperimentConfig, H1Norm, Variant};
pub use experiment::{run_experiment, run_fine_reference, run_sweep, RunOutput, Setup, SweepOutput};
pub use metrics::{relative_h1_error, relative_l2_error, ErrorNorms};
pub use report::{ExperimentReport, CSV_HEADER};
pub use vtk::{export_vtk, read_vtk};
