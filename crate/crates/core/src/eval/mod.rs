//! Benchmark harness, reports and the synthetic scenario generator.

pub mod generate;
pub mod harness;
pub mod manifest;
pub mod report;

use thiserror::Error;

pub use generate::{generate_scenarios, write_scenario, Fault, FaultMix, SceneSpec};
pub use harness::{run_benchmark, BackendSource, BenchRun};
pub use manifest::{Manifest, Sample};
pub use report::{Report, SampleResult};

use crate::backends::BackendError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
