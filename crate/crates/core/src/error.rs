use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("arithmetic coder failure: {0}")]
    Coder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
