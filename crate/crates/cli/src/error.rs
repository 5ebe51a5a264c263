use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] d3po_core::Error),

    #[error(transparent)]
    Service(#[from] d3po_service::ServiceError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A verification check did not pass.
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
