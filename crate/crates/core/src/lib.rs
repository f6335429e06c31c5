//! Lagged-correlation ranking of peripheral locations as early-warning
//! predictors of incidence at a target location, and a short-horizon
//! forecaster driven by the top-ranked predictors.

pub mod correlation;
pub mod dataset;
pub mod error;
pub mod geo_metrics;
pub mod ingest;
pub mod predictor;
pub mod preprocess;
pub mod riskmap;
pub mod windowing;

pub use error::{Error, Result};
