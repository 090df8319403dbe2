use std::path::PathBuf;

/// Process exit code for configuration and usage errors.
pub const EXIT_BAD_CONFIG: i32 = 2;
/// Process exit code when training aborts on a non-finite loss or gradient.
pub const EXIT_DIVERGED: i32 = 3;
/// Process exit code for every other failure.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("config key `{key}` (line {line}): {message}")]
    ConfigValue { key: String, line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] dfconformer::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey { .. }
            | CliError::ConfigSyntax { .. }
            | CliError::ConfigValue { .. }
            | CliError::Usage(_)
            | CliError::Input { .. } => EXIT_BAD_CONFIG,
            CliError::Model(dfconformer::Error::Diverged { .. }) => EXIT_DIVERGED,
            CliError::Model(
                dfconformer::Error::UnknownPreset(_)
                | dfconformer::Error::InvalidArgument { .. }
                | dfconformer::Error::DumpLimit { .. },
            ) => EXIT_BAD_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}
