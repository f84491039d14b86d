use std::path::PathBuf;

use clickhere_core::eval::EvalError;
use clickhere_core::model::ModelError;
use clickhere_core::train::TrainError;
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::report::ReportError;

/// An input problem attributable to one request or argument field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(#[from] FieldError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset/config mismatch: {0}")]
    Mismatch(String),
}

/// The one-line error printed by the CLI.
#[derive(Debug, Serialize)]
pub struct ErrorLine {
    pub error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Report(_) => "report",
            Error::Train(_) => "train",
            Error::Eval(_) => "eval",
            Error::Model(_) => "model",
            Error::Io { .. } => "io",
            Error::Mismatch(_) => "mismatch",
        }
    }

    pub fn line(&self) -> ErrorLine {
        let (field, message) = match self {
            Error::Config(c) if !c.field.is_empty() => (Some(c.field.clone()), c.message.clone()),
            Error::Input(f) => (Some(f.field.clone()), f.message.clone()),
            other => (None, other.to_string()),
        };
        ErrorLine {
            error: self.kind(),
            field,
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
