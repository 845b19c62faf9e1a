use std::path::PathBuf;

use crate::skeleton::JointId;

/// Errors produced by the toolkit.
///
/// Variants are grouped by what went wrong rather than by module so that
/// front ends can map them onto a small set of exit codes (see
/// [`Error::category`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    Structural(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("point is not projectable (z = {z})")]
    NonProjectable { z: f64 },

    #[error("joint {joint:?}: {source}")]
    AtJoint {
        joint: JointId,
        #[source]
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sample size {got} outside valid range ({needed})")]
    SampleSize { got: usize, needed: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient configuration: {0}")]
    RankDeficient(String),

    #[error("empty selection: {0}")]
    Selection(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by command-line front ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input, bad configuration, or a violated precondition.
    User,
    Io,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dimension(expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn at_joint(joint: JointId, source: Error) -> Self {
        Error::AtJoint {
            joint,
            source: Box::new(source),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::AtJoint { source, .. } => source.category(),
            _ => ErrorCategory::User,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
