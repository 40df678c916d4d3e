use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("malformed environment file: {0}")]
    Format(String),

    #[error("no side length up to {max_side} satisfies the goodness threshold")]
    SearchFailed { max_side: usize },

    #[error("cluster geometry unavailable: {0}")]
    GeometryUnavailable(String),

    #[error("good-box path exhausted after {achieved} of {requested} steps")]
    PathTooShort { achieved: usize, requested: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("region of {sites} sites exceeds the exact-analysis cap of {cap}")]
    Capacity { sites: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("function is outside V_A: {0}")]
    Domain(String),

    #[error("uniformization budget exhausted: tail bound {achieved:e} after {terms} terms")]
    Precision { achieved: f64, terms: usize },

    #[error("flip-path construction bug: {0}")]
    ConstructionBug(String),

    #[error("fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("invalid config ({} problem(s)): {}", .0.len(), .0.join("; "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Range(_) => "range",
            Error::Format(_) => "format",
            Error::SearchFailed { .. } => "search_failed",
            Error::GeometryUnavailable(_) => "geometry_unavailable",
            Error::PathTooShort { .. } => "path_too_short",
            Error::NotApplicable(_) => "not_applicable",
            Error::Capacity { .. } => "capacity",
            Error::Numerical(_) => "numerical",
            Error::Domain(_) => "domain",
            Error::Precision { .. } => "precision",
            Error::ConstructionBug(_) => "construction_bug",
            Error::FitUnavailable(_) => "fit_unavailable",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
