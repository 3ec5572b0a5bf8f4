use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid architecture, hyperparameter or option.
    #[error("configuration error: {0}")]
    Config(String),

    /// A vector or network did not have the expected shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Input data violated a structural or value constraint.
    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    /// Malformed checkpoint or sidecar file.
    #[error("invalid checkpoint {}: {message}", path.as_ref().map(|p| p.display().to_string()).unwrap_or_default())]
    Format { path: Option<PathBuf>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn data(message: impl Into<String>) -> Self {
        Error::Data { line: None, message: message.into() }
    }

    pub(crate) fn data_at(line: usize, message: impl Into<String>) -> Self {
        Error::Data { line: Some(line), message: message.into() }
    }

    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format { path: None, message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
