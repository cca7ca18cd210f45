//! Multivariate Bayesian structural time-series (MBSTS) engine.
//!
//! Each target series carries its own set of latent components (local linear
//! trend with a mean-reverting slope, seasonal block, damped cycle) and a
//! spike-and-slab static regression. The joint posterior over latent paths,
//! component variances, inclusion indicators, coefficients and the observation
//! covariance is explored with a five-step Gibbs sampler, and forecasts are
//! drawn from the posterior predictive distribution.
//!
//! Module map:
//!
//! * [`statespace`] assembles the block state-space system from a [`ModelSpec`].
//! * [`kalman`] filters, smooths and simulates latent state paths.
//! * [`regression`] holds the spike-and-slab conditionals and prior elicitation.
//! * [`gibbs`] runs the sampler and owns draw storage.
//! * [`forecast`] produces posterior-predictive samples and summaries.
//! * [`simgen`] generates the reference synthetic datasets.
//! * [`bench`] runs growing-window one-step-ahead evaluations.
//! * [`store`] persists posterior draws as flat column files.

pub mod bench;
pub mod dist;
pub mod error;
pub mod forecast;
pub mod gibbs;
pub mod kalman;
pub mod linalg;
pub mod regression;
pub mod rng;
pub mod simgen;
pub mod statespace;
pub mod store;

pub use error::{Error, Result};
pub use statespace::{ComponentConfig, ComponentCovariances, ComponentKind, ModelSpec, StateSpaceSystem};
pub use gibbs::{train, PosteriorDraws, TrainConfig};
pub use regression::{InclusionVector, PriorSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
