use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parameter set '{0}' has the reference role and cannot be mutated")]
    ReadOnly(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tie label has no winner; tie pairs are skipped by the caller")]
    TieLabel,

    #[error("pair {0} has no label")]
    Unlabeled(u64),

    #[error("pair {0} is not in the spool")]
    DanglingPair(u64),

    #[error("pair {0} already has a label")]
    DuplicateLabel(u64),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
