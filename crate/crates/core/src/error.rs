use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input values.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("joint {joint} is not in front of the camera (depth {depth})")]
    Projection { joint: usize, depth: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dimension or layer-shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("protocol split violation: {0}")]
    Split(String),

    #[error("missing normalization statistics")]
    MissingStats,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
