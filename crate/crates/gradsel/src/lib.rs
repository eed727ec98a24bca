//! Data-driven anisotropic bandwidth selection for kernel empirical risk
//! minimization, based on the comparison of gradient empirical risks.
//!
//! The crate provides:
//!
//! - [`kernels`]: product kernels, noise models, convolution and FFT-friendly
//!   deconvolution kernel evaluation;
//! - [`grids`]: spatial grids and exponential bandwidth nets;
//! - [`selector`]: the generic gradient-comparison selection engine
//!   (majorants, the BV criterion, argmin rule, gradient-link diagnostics);
//! - [`noisy_kmeans`]: k-means clustering under errors in variables with
//!   deconvolution distortion and its selection rule;
//! - [`robust_regression`]: Huber local-constant regression with pointwise
//!   and global (L_q) selection rules;
//! - [`experiments`]: data generators, the seeded replication harness and
//!   CSV reporting.

pub mod error;
mod conv;
pub mod experiments;
pub mod grids;
pub mod kernels;
pub mod numerics;
pub mod noisy_kmeans;
pub mod robust_regression;
pub mod selector;

pub use error::{Error, Result};
