//! Failures carry a stable kind for the machine-readable error record and
//! the process exit code.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    /// Stable identifier such as `FileNotFound` or `SchemaMismatch`.
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn runtime(kind: &str, message: impl Into<String>) -> Self {
        Self { error: kind.to_string(), message: message.into(), exit_code: 1 }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { error: "UsageError".into(), message: message.into(), exit_code: 2 }
    }

    /// Invalid configuration is a usage error: nothing has run yet.
    pub fn config(message: impl Into<String>) -> Self {
        Self { error: "InvalidConfig".into(), message: message.into(), exit_code: 2 }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        serde_json::to_string(self).expect("error record serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<rwtkan::Error> for CliError {
    fn from(e: rwtkan::Error) -> Self {
        use rwtkan::Error as E;
        let kind = match &e {
            E::DegenerateColumn(_) => "DegenerateColumn",
            E::MissingFeature(_) => "MissingFeature",
            E::SchemaMismatch(_) => "SchemaMismatch",
            E::NonMonotoneDepths(_) => "NonMonotoneDepths",
            E::ShortProfile { .. } => "ShortProfile",
            E::WindowGap { .. } => "WindowGap",
            E::TooFewProfiles { .. } => "TooFewProfiles",
            E::EmptyData => "EmptyData",
            E::InvalidParam(_) => "InvalidParam",
            E::DimensionMismatch { .. } => "DimensionMismatch",
            E::InvalidLayout(_) => "InvalidLayout",
            E::Diverged { .. } => "Diverged",
            E::EmptyBackground => "EmptyBackground",
            E::TooManyFeatures(_) => "TooManyFeatures",
            E::Parse { .. } => "ParseError",
            E::UnknownFunction { .. } => "UnknownFunction",
            E::BadVariableIndex { .. } => "BadVariableIndex",
            E::Pole(_) => "PoleError",
            E::UnboundVariable(_) => "UnboundVariable",
            E::Domain(_) => "DomainError",
            E::NotFound(_) => "NotFound",
            E::ConstantTruth => "ConstantTruth",
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => "FileNotFound",
            E::Io(_) => "IoError",
            E::Csv(_) => "CsvError",
            E::Json(_) => "JsonError",
        };
        CliError::runtime(kind, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::runtime("CsvError", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime("JsonError", e.to_string())
    }
}
