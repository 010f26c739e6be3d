use thiserror::Error;

/// Failures raised by the driver itself, as opposed to the library.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("missing input: {0}")]
    Dependency(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn dependency(msg: impl Into<String>) -> Self {
        CliError::Dependency(msg.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dependency(_) => "dependency",
        }
    }
}

/// Stable kind of the first typed error in the chain.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<mhtts_core::Error>() {
            return e.kind();
        }
    }
    "internal"
}
