use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use woundscope_core::annotations::AnnotationError;
use woundscope_core::augment::AugmentError;
use woundscope_core::detection::DetectionError;
use woundscope_core::evaluation::EvalError;
use woundscope_core::inference::InferenceError;
use woundscope_core::raster::RasterError;

/// Failure classes, each with a fixed exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Validation,
    Io,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Kind::Validation => 1,
            Kind::Io => 2,
            Kind::Internal => 3,
        })
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Internal,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn classify(is_io: bool, message: String) -> CliError {
    CliError {
        kind: if is_io { Kind::Io } else { Kind::Validation },
        message,
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        classify(e.is_io(), e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        classify(e.is_io(), e.to_string())
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        let io = matches!(e, RasterError::Io { .. });
        classify(io, e.to_string())
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<DetectionError> for CliError {
    fn from(e: DetectionError) -> Self {
        CliError::validation(e.to_string())
    }
}
