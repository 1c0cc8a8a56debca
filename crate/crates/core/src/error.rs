use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, the solvers and the run harness.
#[derive(Debug, Error)]
pub enum NsfError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("CFL violation: dt = {dt:e} exceeds the stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("temperature recovery failed in cell {cell}: {reason}")]
    TemperatureRecovery { cell: usize, reason: String },

    #[error("positivity lost at t = {time}: {what}")]
    PositivityLoss { time: f64, what: String },

    #[error("boundary condition violated: {0}")]
    Boundary(String),

    #[error("nonconforming grids: {0}")]
    NonconformingGrid(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NsfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NsfError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, NsfError>;
