//! Command-line entry points: `run` executes a complete train-then-distill
//! experiment described by a manifest file, `analyze` prints model-size
//! tables from spec files.

pub mod analyze;
pub mod manifest;
pub mod runner;

use std::fmt;

/// Stable exit codes: 0 success, 2 validation error, 3 runtime contract
/// error.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// A CLI failure carrying its exit class.
#[derive(Debug)]
pub enum CliError {
    /// Bad manifest, config, spec, or arguments; nothing was trained.
    Validation(String),
    /// A contract or I/O failure at run time.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn validation(e: impl fmt::Display) -> CliError {
        CliError::Validation(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<distilkit::json::JsonError> for CliError {
    fn from(e: distilkit::json::JsonError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<distilkit::config::ConfigError> for CliError {
    fn from(e: distilkit::config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<distilkit::models::ModelError> for CliError {
    fn from(e: distilkit::models::ModelError) -> Self {
        use distilkit::models::ModelError;
        match &e {
            ModelError::Config(_) | ModelError::Json(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<distilkit::tasks::TaskError> for CliError {
    fn from(e: distilkit::tasks::TaskError) -> Self {
        use distilkit::tasks::TaskError;
        match &e {
            TaskError::Config(_) | TaskError::Parse { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<distilkit::distill::DistillError> for CliError {
    fn from(e: distilkit::distill::DistillError) -> Self {
        use distilkit::distill::DistillError;
        use distilkit::models::ModelError;
        match &e {
            DistillError::Validation(_)
            | DistillError::Config(_)
            | DistillError::Model(ModelError::Config(_) | ModelError::Json(_)) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}
