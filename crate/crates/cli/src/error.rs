use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("{stage}: {message}")]
    Numerical { stage: &'static str, message: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::SchemaMismatch(_) => 2,
            CliError::Certification(_) => 3,
            CliError::Numerical { .. } => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn numerical(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Numerical {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
