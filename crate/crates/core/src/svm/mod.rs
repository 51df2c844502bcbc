//! Multi-class SVMs over precomputed kernels.
//!
//! Binary machines are trained by SMO with second-order working-set
//! selection; multi-class prediction is one-vs-one majority voting.

pub mod kernel;
pub mod ovo;
pub mod smo;
pub mod tune;

pub use kernel::{channel_scales, chi2_distance, kernel_eval, kernel_matrix, Channel, KernelMatrix, KernelSpec, Sample};
pub use ovo::{ovo_predict, ovo_train, BinaryMachine, SvmModel};
pub use smo::{smo_train_binary, BinarySolution, SmoParams};
pub use tune::{tune, CvScheme, Grid, TuneResult};
