use thiserror::Error;

use crate::grid::CellCoord;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("capacity violation: cannot {op} at cell ({}, {}) (occupied {occupied}, capacity {capacity})", cell.i, cell.j)]
    CapacityViolation {
        op: &'static str,
        cell: CellCoord,
        occupied: u32,
        capacity: u32,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular system: normal matrix has rank {rank} < {dim}")]
    Singular { rank: usize, dim: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invariant breach at tick {tick}: {msg}")]
    Invariant { tick: u32, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn validation(line: Option<usize>, msg: impl Into<String>) -> Self {
        SimError::Validation {
            line,
            msg: msg.into(),
        }
    }
}

impl From<csv::Error> for SimError {
    fn from(err: csv::Error) -> Self {
        let line = err
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        SimError::Parse {
            line,
            msg: err.to_string(),
        }
    }
}
