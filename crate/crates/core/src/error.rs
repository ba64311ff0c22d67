use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CplError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CplError {
    /// Inconsistent shapes, invalid hyperparameters or incompatible variant choices.
    #[error("configuration error: {0}")]
    Config(String),

    /// A vector whose norm is zero where a direction is required.
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    /// Two plane-spanning vectors that are parallel or antiparallel.
    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CplError {
    pub fn config(msg: impl Into<String>) -> Self {
        CplError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CplError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CplError::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CplError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CplError::config(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(CplError::config("vectors must have dimension >= 1"));
    }
    Ok(())
}
