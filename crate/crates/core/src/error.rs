use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: missing mapped column, bad threshold, missing deflator.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data{}: {reason}", code_suffix(.hs_code))]
    InsufficientData {
        hs_code: Option<String>,
        reason: String,
    },

    #[error("undefined slope: all x values are equal")]
    UndefinedSlope,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("k-means infeasible: {rows} rows for k = {k}")]
    Infeasible { rows: usize, k: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("gini impurity undefined for an empty node")]
    EmptyNode,

    #[error("stratification infeasible: class `{class}` has {count} members, need at least {k}")]
    StratificationInfeasible {
        class: String,
        count: usize,
        k: usize,
    },

    #[error("too many features for exact enumeration: {p} > {limit}")]
    EnumerationGuard { p: usize, limit: usize },

    #[error("unmapped tariff prefix for HS code {0}")]
    UnmappedTariff(String),

    #[error("keyed inputs disagree; orphan codes: {}", .0.join(", "))]
    OrphanCodes(Vec<String>),

    #[error("misaligned years between series {0} and {1}")]
    MisalignedYears(String, String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing upstream artifact {path} (produced by stage `{stage}`)")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn code_suffix(code: &Option<String>) -> String {
    code.as_ref()
        .map(|c| format!(" for {c}"))
        .unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn insufficient(hs_code: Option<&str>, reason: impl Into<String>) -> Self {
        Error::InsufficientData {
            hs_code: hs_code.map(str::to_owned),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Unsupported(_)
            | Error::EnumerationGuard { .. }
            | Error::MissingArtifact { .. } => 2,
            _ => 1,
        }
    }
}
