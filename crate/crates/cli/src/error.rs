use bayestrans_core::Error as CoreError;

/// Command failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or malformed input files and data.
    #[error("input error: {0}")]
    Input(String),
    /// Training or output failures.
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(m) | CoreError::NotFound(m) => CliError::Input(m),
            CoreError::Config(m) => CliError::Config(m),
            d @ CoreError::Divergence { .. } => CliError::Runtime(d.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
