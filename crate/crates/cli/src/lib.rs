//! Config-driven pipeline around `clvae-core`: stage orchestration, run
//! manifests and report rendering.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, run_stages, Manifest, Run, Stage, STAGES};
