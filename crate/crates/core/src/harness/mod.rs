//! Configuration, data ingestion, synthetic data, pipelines, metrics and
//! model persistence.

pub mod bundle;
pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod pipeline;
pub mod synth;
pub mod wav;

pub use bundle::{load_bundle, save_bundle, ModelBundle};
pub use config::{PipelineConfig, System};
pub use evaluate::{evaluate, EvaluationReport};
pub use manifest::{load_manifest, Manifest};
pub use pipeline::{emit_curves, run_pipeline, run_systems, sweep_segment_size, AudioDataset, Dataset};
pub use synth::{synth_dataset, SynthDataset, SynthSpec};
