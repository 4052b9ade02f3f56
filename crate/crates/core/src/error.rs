use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown edge `{0}`")]
    UnknownEdge(String),

    #[error("nodes `{from}` and `{to}` are not connected")]
    Unreachable { from: String, to: String },

    #[error("hydraulic solver did not converge after {iterations} iterations (mass residual {mass_residual:.3e} m3/s, energy residual {energy_residual:.3e} m)")]
    NonConvergence {
        iterations: usize,
        mass_residual: f64,
        energy_residual: f64,
    },

    #[error("nodes isolated from every fixed-head source: {}", .0.join(", "))]
    Isolated(Vec<String>),

    #[error("solver failed at timestep {step}: {source}")]
    AtTimestep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid attack: {0}")]
    Attack(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-physical state: {0}")]
    NonPhysical(String),

    #[error("{0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
