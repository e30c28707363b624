//! Reproducible experiment harness: configuration, file formats, the
//! experiment drivers and CSV output.

pub mod config;
pub mod csv;
pub mod experiments;
pub mod io;

pub use config::{Experiment, ExperimentConfig, OperatorSpec, ReconstructorSpec};
pub use experiments::{run, RunSummary};
