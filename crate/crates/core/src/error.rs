use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single problem found while validating a configuration document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key path, e.g. `red.q_min`.
    pub key: String,
    /// 1-based line in the source document, when it can be located.
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value} ({constraint})")]
    Domain {
        what: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("integration error at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e}, last iterate {last:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: [f64; 3],
    },

    #[error("no equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("transition {event} is not applicable in phase {phase}")]
    Transition { event: String, phase: String },

    #[error("truncated event log: {0}")]
    TruncatedLog(String),

    #[error("surrogate error: {0}")]
    Surrogate(String),

    #[error("rank-deficient basis; deficient terms: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("series error: {0}")]
    Series(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from the user's configuration rather than
    /// from a model run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParams(_) | Error::Domain { .. }
        )
    }
}
