//! Density estimation for multivariate zero-inflated nonnegative data.
//!
//! Two copula models are provided:
//!
//! * [`zicar`]: zeros arise from a value-independent binary mask applied to a
//!   positive parent distribution described by a Gaussian copula.
//! * [`zibt`]: zeros arise from thresholding a latent Gaussian; the joint law is
//!   a rectified Gaussian copula.
//!
//! Both fit their correlation parameters pairwise, so estimation and the
//! approximate likelihood stay polynomial in the dimension. The [`synth`] and
//! [`bench`] modules reproduce the synthetic anomaly-detection benchmark, and
//! [`baselines`] holds the GMM and product-KDE comparators.

pub mod baselines;
pub mod bench;
pub mod credit;
pub mod dataset;
pub mod error;
pub mod marginals;
pub mod mask;
pub mod model_file;
pub mod rgd;
pub mod stats;
pub mod synth;
pub mod zibt;
pub mod zicar;

pub use dataset::Dataset;
pub use error::{Error, ErrorClass, Result};
pub use model_file::{FittedModel, ModelFile};
pub use rgd::{LatentObs, RgdParams, ZeroPattern};
pub use stats::CorrelationMatrix;
