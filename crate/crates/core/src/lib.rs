//! Functional-connectome fingerprinting.
//!
//! The pipeline turns per-subject, per-session ROI time series into Pearson
//! connectomes, strips shared structure from them (either a group average or
//! the reconstruction of a small convolutional autoencoder), refines the
//! residuals with a K-SVD sparse dictionary, and finally matches subjects
//! across sessions by maximum correlation.
//!
//! Module map:
//!
//! - [`synth`]: synthetic multi-session cohorts with planted subject signal.
//! - [`connectome`]: detrending, band-pass, Pearson matrices, edge vectors.
//! - [`convae`]: convolutional autoencoder with hand-written backprop.
//! - [`sparse`]: OMP, K-SVD and sparse refinement.
//! - [`fingerprint`]: similarity, identification, permutation tests and the
//!   experiment drivers (pipeline, grid search, ablation).

pub mod connectome;
pub mod convae;
mod error;
pub mod fingerprint;
pub mod seed;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
