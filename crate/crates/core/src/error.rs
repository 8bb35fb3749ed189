use thiserror::Error;

#[derive(Debug, Error)]
pub enum MafeError {
    /// Component vector lengths disagree with the declared schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// An agent produced (or was given) an action of the wrong shape or range.
    #[error("contract error for agent {agent} ({name}): {detail}")]
    Contract {
        agent: usize,
        name: String,
        detail: String,
    },
    #[error("shape error: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },
    #[error("unknown name: {0}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MafeError>;
