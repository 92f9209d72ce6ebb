//! A running annotation project: validated inputs, an event-sourced state
//! machine over them, and its on-disk persistence.

pub mod config;
pub mod events;
pub mod persist;
pub mod state;

use thiserror::Error;

pub use config::{
    inputs_digest, test_token_id, AuthConfig, Principal, ProjectConfig, ProjectInputs, Settings, TestFile,
    TestSpec, CONFIG_FILE, INPUTS_DIR,
};
pub use events::{read_log, Event, EventLog, LogError, LogTarget, Transaction};
pub use persist::{Project, EVENTS_FILE, SNAPSHOT_DIR};
pub use state::{
    BanPreview, ItemAnswer, ItemView, ManualView, NextPage, Page, PageClosure, PageView, PoolStatus,
    ProjectReport, ProjectState, SubmitOutcome, TieView,
};

/// Errors surfaced to callers, each with an HTTP status.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ServiceError {
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("gone: {0}")]
    Gone(String),
    #[error("unprocessable: {0}")]
    Unprocessable(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status_code(&self) -> u16 {
        match self {
            ServiceError::Forbidden(_) => 403,
            ServiceError::NotFound(_) => 404,
            ServiceError::Conflict(_) => 409,
            ServiceError::Gone(_) => 410,
            ServiceError::Unprocessable(_) => 422,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Internal(_) => 500,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            ServiceError::Forbidden(m)
            | ServiceError::NotFound(m)
            | ServiceError::Conflict(m)
            | ServiceError::Gone(m)
            | ServiceError::Unprocessable(m)
            | ServiceError::BadRequest(m)
            | ServiceError::Internal(m) => m,
        }
    }
}

impl From<LogError> for ServiceError {
    fn from(e: LogError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}
