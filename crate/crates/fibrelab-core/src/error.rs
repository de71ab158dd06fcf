use thiserror::Error;

use crate::linalg::RVector;

/// Crate-wide error type. Evaluation errors that bubble up through a fibring
/// tree are wrapped in `Traced` so the failing node path is visible.
#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("fibring rule has no entry for input {vector}")]
    RuleDomain { vector: RVector },

    #[error("no jump path from {src} world {world} to {tgt}")]
    UnreachableJump {
        src: String,
        world: String,
        tgt: String,
    },

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid rational literal: {0}")]
    Rational(String),

    #[error("cube guard exceeded: n={n} bits > limit {max} (raise FIBRELAB_MAX_CUBE or pass --max-cube)")]
    CubeGuard { n: usize, max: usize },

    #[error("json error: {0}")]
    Json(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("at {}: {source}", path.join("/"))]
    Traced {
        path: Vec<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Prefix `node` onto the trace path, wrapping the error if needed.
    pub fn at_node(self, node: &str) -> Self {
        match self {
            Error::Traced { mut path, source } => {
                path.insert(0, node.to_string());
                Error::Traced { path, source }
            }
            other => Error::Traced {
                path: vec![node.to_string()],
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, unwrapping any trace frames.
    pub fn root(&self) -> &Error {
        match self {
            Error::Traced { source, .. } => source.root(),
            other => other,
        }
    }

    /// Node path accumulated while unwinding a fibred evaluation, if any.
    pub fn trace_path(&self) -> &[String] {
        match self {
            Error::Traced { path, .. } => path,
            _ => &[],
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
