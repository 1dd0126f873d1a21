//! Gaussian process regression with non-stationary generalised spectral
//! mixture (GSM) kernels.
//!
//! The GSM kernel places Gaussian process priors on the weight, lengthscale
//! and frequency of every mixture component, so the learned spectrogram may
//! vary over the input space. Hyperparameters are fitted by MAP inference in
//! whitened coordinates; data on a complete grid is handled exactly through
//! per-dimension eigendecompositions.

pub mod checks;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod kernels;
pub mod kronecker;
pub mod latent;
pub mod model;
pub mod modelfile;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use data::GridDataset;
pub use gp::Prediction;
pub use model::{GpModel, KernelKind};
pub use train::{InitMethod, TrainConfig};
