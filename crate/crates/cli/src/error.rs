use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    BlowUp {
        context: String,
        source: stochastic_es::Error,
    },

    #[error("{context}: {source}")]
    Numeric {
        context: String,
        source: stochastic_es::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Config(_) => 2,
            Self::BlowUp { .. } => 3,
            Self::Numeric { .. } | Self::Io { .. } => 1,
        })
    }
}

/// Attaches context to a library error, routing blow-ups and parameter
/// problems to their own exit codes.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for stochastic_es::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| match source {
            stochastic_es::Error::BlowUp { .. } => CliError::BlowUp {
                context: what(),
                source,
            },
            stochastic_es::Error::InvalidParameter { .. } => CliError::Config(format!("{}: {source}", what())),
            _ => CliError::Numeric {
                context: what(),
                source,
            },
        })
    }
}
