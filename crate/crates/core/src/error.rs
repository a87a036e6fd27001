use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate measurement for station `{station}` at time `{time}` ({path}:{line})")]
    DuplicateKey {
        path: PathBuf,
        line: u64,
        station: String,
        time: String,
    },

    #[error("station `{station}` referenced at {path}:{line} is not declared in the stations file")]
    UnknownStation {
        path: PathBuf,
        line: u64,
        station: String,
    },

    #[error("cannot impute {} cell(s) without observed neighbours: {}", .cells.len(), format_cells(.cells))]
    Imputation { cells: Vec<(String, usize)> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("{0}")]
    Capability(String),

    #[error("training diverged at epoch {epoch} (learning rate {lr:e}): loss is {loss}")]
    Divergence { epoch: usize, lr: f64, loss: f64 },

    #[error("diagnostic failed: {0}")]
    Diagnostic(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_cells(cells: &[(String, usize)]) -> String {
    const SHOWN: usize = 10;
    let mut out = cells
        .iter()
        .take(SHOWN)
        .map(|(station, t)| format!("({station}, t={t})"))
        .collect::<Vec<_>>()
        .join(", ");
    if cells.len() > SHOWN {
        out.push_str(&format!(", ... {} more", cells.len() - SHOWN));
    }
    out
}
