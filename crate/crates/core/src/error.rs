use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input violated a manifold invariant (not orthonormal, not tangent, wrong base point).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The Euclidean mean lost rank, so its projection onto the manifold is not unique.
    #[error("degenerate mean: smallest singular value {sigma_min:e} is below {tol:e}")]
    DegenerateMean { sigma_min: f64, tol: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("engine fault at iteration {}: {}", .0.iteration, .0.detail)]
    Fault(Box<EngineFault>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Numerical audit failure raised by the simulator, with the agent iterates
/// at the time of failure kept for post-mortem inspection.
#[derive(Debug, Clone)]
pub struct EngineFault {
    pub iteration: u64,
    pub detail: String,
    /// Row-major copies of every agent's `X` at the failing iteration.
    pub snapshot: Vec<Vec<f64>>,
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn is_fault(&self) -> bool {
        matches!(self, Error::Fault(_))
    }
}
