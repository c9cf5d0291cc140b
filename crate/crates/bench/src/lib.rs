//! Synthetic indoor scenes with exact ground truth, and the harness that
//! scores goal programs and navigation on them.
//!
//! A run generates scenes ([`scene`]), renders and embeds their observations
//! into a fixture provider ([`synth`]), builds maps with the regular ingest
//! pipeline, evaluates the task programs of [`tasks`] and aggregates recall
//! and navigation success into a [`report::MetricReport`].

pub mod render;
pub mod report;
pub mod scene;
pub mod suite;
pub mod synth;
pub mod tasks;

use thiserror::Error;

pub use report::MetricReport;
pub use scene::{Scene, SceneConfig};
pub use suite::{run_bench, BenchConfig, BuiltScene};
pub use tasks::{Method, Task, TaskFamily};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench configuration: {0}")]
    Config(String),
    #[error("scene layout: {0}")]
    Layout(String),
    #[error("synthesis: {0}")]
    Synthesis(String),
    #[error(transparent)]
    Spatial(#[from] modalmap::spatial::SpatialError),
    #[error(transparent)]
    Provider(#[from] modalmap::provider::ProviderError),
    #[error(transparent)]
    Ingest(#[from] modalmap::ingest::IngestError),
}
