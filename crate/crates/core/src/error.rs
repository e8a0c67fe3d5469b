use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} bits, found {found}{}", line_suffix(*.line))]
    Dimension {
        expected: usize,
        found: usize,
        line: Option<usize>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error{}: {message}", line_suffix(*.line))]
    Parse { line: Option<usize>, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("filter removed every shot (threshold {threshold:.3}); try a lower eta or threshold")]
    AllFiltered { threshold: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("distribution is not normalized (total mass {total})")]
    Normalization { total: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors that originate in the numerics (filtering, EM,
    /// normalization) rather than in input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::AllFiltered { .. }
                | Error::InvalidModel(_)
                | Error::Degenerate(_)
                | Error::Normalization { .. }
        )
    }
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}
