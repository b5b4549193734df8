use std::path::PathBuf;

/// Errors raised across the crate.
///
/// The variants mirror the failure classes the command-line front end maps
/// onto exit codes: configuration and usage problems, dataset problems,
/// numerical blow-ups and plain I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("label error: index {index} is out of range for {m} domains")]
    Label { index: usize, m: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
