use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag value or configuration.
    #[error("{flag}: {message}")]
    Usage { flag: String, message: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read config {path}: {message}")]
    Config { path: String, message: String },
    /// A computation that could not be completed (non-convergence, budget).
    #[error(transparent)]
    Compute(qillum::Error),
}

impl CliError {
    pub fn usage(flag: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage {
            flag: flag.into(),
            message: message.into(),
        }
    }

    /// 2 for usage and domain errors, 1 for failed computations.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Compute(_) => 1,
            _ => 2,
        }
    }
}

impl From<qillum::Error> for CliError {
    fn from(e: qillum::Error) -> Self {
        match e {
            qillum::Error::InvalidParameter { name, value, reason } => CliError::usage(
                format!("--{}", name.replace('_', "-")),
                format!("{reason} (got {value})"),
            ),
            qillum::Error::Unnormalized(_) => CliError::usage("--coeffs", e.to_string()),
            other => CliError::Compute(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
