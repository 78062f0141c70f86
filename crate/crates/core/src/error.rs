use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate projection: homogeneous scale {0:e} is too close to zero")]
    DegenerateProjection(f64),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),

    #[error("trajectory too short: need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid concentration box ({dx}, {dy}); both extents must be positive")]
    InvalidDelta { dx: f64, dy: f64 },

    #[error("duplicate agent id {0}")]
    DuplicateId(u64),

    #[error("detection has no mask")]
    MissingMask,

    #[error("frame {got} is out of order (expected {expected})")]
    FrameOutOfOrder { expected: i64, got: i64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("method `{name}` failed: {reason}")]
    MethodFailure { name: String, reason: String },

    #[error("could not place agent {agent} without overlap after {attempts} attempts")]
    InfeasiblePlacement { agent: u64, attempts: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn stage(stage: &str) -> impl FnOnce(Error) -> Error + '_ {
        move |e| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (files, config values) rather
    /// than internal failures.
    pub fn is_input_error(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_input_error();
        }
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Config { .. }
                | Error::InvalidArgument(_)
                | Error::EmptyDataset
                | Error::SingularHomography(_)
                | Error::DegenerateConfiguration(_)
        )
    }
}
