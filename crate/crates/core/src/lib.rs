//! Generative classification with neural copula densities.
//!
//! The pieces: per-class marginal estimation ([`marginals`]), a positive
//! feed-forward density network with spectral normalization ([`nn`]), the
//! normalized copula density with its uniform-marginal penalty ([`copula`]),
//! the Bayes plug-in classifier ([`classifier`]), Platt calibration
//! ([`calibration`]), evaluation metrics ([`metrics`]), and reference
//! baselines ([`baselines`]). Everything numeric is generic over the scalar
//! type via [`scalar::Scalar`]; the `*64` aliases below pin the `f64`
//! instantiations used by the experiment harness.

pub mod error;
pub mod rng;
pub mod scalar;
pub mod simd;

pub mod baselines;
pub mod calibration;
pub mod classifier;
pub mod copula;
pub mod metrics;
pub mod dataset;
pub mod marginals;
pub mod nn;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Floor applied to densities before any logarithm.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// `f64` instantiations used by the command-line experiments.
pub type Dataset64 = dataset::Dataset<f64>;
pub type MaskedDataset64 = dataset::MaskedDataset<f64>;
pub type PreprocessStats64 = dataset::PreprocessStats<f64>;
pub type MarginalModel64 = marginals::MarginalModel<f64>;
pub type DenseNet64 = nn::DenseNet<f64>;
pub type CopulaNet64 = copula::CopulaNet<f64>;
pub type DccModel64 = classifier::DccModel<f64>;
pub type PlattModel64 = calibration::PlattModel<f64>;
pub type EvalReport64 = metrics::EvalReport<f64>;
