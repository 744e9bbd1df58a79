//! Interpretable state-space glucose forecaster.
//!
//! Variable selection networks fuse static and time-varying covariates,
//! stacked Mamba blocks with multi-head value/readout sharing process the
//! fused sequence, and a quantile head emits multi-horizon forecasts. Scan
//! traces unroll into hidden-attention lag maps; decoder covariates can be
//! overwritten for counterfactual forecasts.

pub mod attribution;
pub mod checkpoint;
pub mod config;
pub mod counterfactual;
mod error;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ssm;
pub mod train;

pub use config::ModelConfig;
pub use error::{CoreError, Result};
pub use model::{ForecastResult, Forecaster, Interpretation, Normalizer};
