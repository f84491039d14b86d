//! File formats, pipeline steps, CLI support and the HTTP inference service
//! around `clickhere-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod predict;
pub mod report;
pub mod server;

pub use clickhere_core as core;
pub use error::{Error, FieldError, Result};
