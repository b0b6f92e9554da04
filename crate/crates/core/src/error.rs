use thiserror::Error;

use crate::data::FeatureId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} is constant; cannot min-max scale it")]
    DegenerateColumn(String),
    #[error("required feature {0} is missing from the row")]
    MissingFeature(FeatureId),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("depths are not strictly increasing in profile {0}")]
    NonMonotoneDepths(String),
    #[error("profile {key} has {count} samples; at least 4 are required")]
    ShortProfile { key: String, count: usize },
    #[error("daily series for {reservoir} is missing {date}")]
    WindowGap { reservoir: String, date: String },
    #[error("need at least {needed} profiles, got {got}")]
    TooFewProfiles { needed: usize, got: usize },
    #[error("no training data")]
    EmptyData,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("training diverged at {stage} (loss {loss})")]
    Diverged { stage: usize, loss: f64 },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("{0} features exceed the exact-enumeration limit of 15")]
    TooManyFeatures(usize),
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown function `{name}` at position {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("bad variable index `{text}` at position {position}")]
    BadVariableIndex { text: String, position: usize },
    #[error("pole: denominator {0:e} vanishes")]
    Pole(f64),
    #[error("variable x{0} is unbound")]
    UnboundVariable(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("r2 undefined: observed values are constant")]
    ConstantTruth,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
