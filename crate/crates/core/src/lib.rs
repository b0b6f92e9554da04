//! Interpretable reservoir water temperature (RWT) modeling.
//!
//! The crate covers the whole workflow: profile ingestion and rolling
//! covariates ([`ingest`]), min-max scaling ([`data`]), three black-box
//! regressors ([`trees`], [`mlp`]), exact Shapley attribution ([`shapley`]),
//! Kolmogorov-Arnold networks with symbolic snapping ([`kan`]), symbolic
//! expressions plus the published equation bank ([`expr`]) and evaluation
//! metrics ([`metrics`]).
//!
//! Every model predicts in normalized feature space through the
//! [`Predictor`] trait, so the Shapley and reporting code is model-agnostic.

pub mod data;
pub mod error;
pub mod expr;
pub mod ingest;
pub mod kan;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod rng;
pub mod shapley;
pub mod trees;
pub mod tuning;

pub use data::{FeatureId, FeatureMatrix, FeatureVector, RawRow, Scaler, ScalerMode, N_FEATURES};
pub use error::{Error, Result};
pub use model::{LinearModel, Predictor, RegressorModel};
