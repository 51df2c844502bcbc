//! Regressor-bank descriptors for audio event classification.
//!
//! An audio event is cut into short overlapping segments. For every event
//! class a random regression forest learns to predict, from a single segment,
//! how far away the event onset and offset are. Running the whole bank of
//! class-specific forests over an event and keeping the peak of the
//! accumulated onset/offset confidence curves yields a compact descriptor
//! with one entry per class, which is then classified with an SVM.
//!
//! ```text
//! waveform -> features -> { regforest bank, matcher } -> descriptor -> svm
//!                      \-> baselines (BoW / PBoW / max voting)
//! ```
//!
//! The [`harness`] module ties the stages together (configuration, manifests,
//! synthetic data, pipelines, reports and model bundles).

pub mod baselines;
pub mod descriptor;
pub mod error;
pub mod features;
pub mod harness;
pub mod matcher;
pub mod regforest;
pub mod rng;
pub mod svm;

pub use error::{Error, Result};
pub use features::{FeatureConfig, SegmentFeatures, Waveform};
