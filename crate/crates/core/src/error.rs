use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the inpainting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("registration is unconstrained: {0}")]
    UnconstrainedRegistration(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("stage `{stage}`{}: {source}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn frame(frame: usize, message: impl Into<String>) -> Self {
        Error::Frame {
            frame,
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str, frame: Option<usize>) -> Self {
        Error::Stage {
            stage,
            frame,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json { .. } => ErrorClass::Config,
            Error::Numerical(_)
            | Error::UnconstrainedRegistration(_)
            | Error::RegistrationFailed(_)
            | Error::TooLarge(_) => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
