//! Closed-form sequential Bayesian estimation of time-varying covariance
//! matrices for multivariate return series.
//!
//! The crate is organised bottom-up:
//!
//! * [`matstat`]: symmetric-matrix kernels (square roots, upper Cholesky,
//!   spectra, multivariate gamma);
//! * [`gwishart`]: generalized (inverted) Wishart densities and moments,
//!   the symmetric GIW point estimator, and matrix-beta sampling;
//! * [`filter`]: the discount volatility filter and its steady state;
//! * [`likelihood`]: closed-form log-likelihood of a volatility path and
//!   forecast diagnostics;
//! * [`search`]: grid search over a diagonal `Ω` and the discount factor;
//! * [`simulate`]: exact forward simulation of the model.

pub mod error;
pub mod filter;
pub mod gwishart;
pub mod likelihood;
pub mod matstat;
pub mod search;
pub mod simulate;

pub use error::{Error, Result};
pub use filter::{
    filter_init, filter_run, filter_step, FilterRun, FilterState, ForecastDist, ForecastMeanMode,
    ModelConfig, StandardizationMode, StepRecord, VolFilter,
};
pub use likelihood::{LikelihoodBreakdown, PerfReport};
pub use matstat::{SymPosDefMatrix, UpperTriangular};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
