use std::path::PathBuf;

/// Errors surfaced by the pipeline library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corpus exhausted: no sessions survive filtering")]
    CorpusExhausted,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("item id {0} is outside the catalog")]
    UnknownItem(u32),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("llm request failed after {attempts} attempts: {message}")]
    LlmExhausted { attempts: u32, message: String },

    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with [`Error::NonFinite`] on the first NaN or infinite entry.
pub fn ensure_finite(context: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            context: context.to_string(),
            index,
        }),
        None => Ok(()),
    }
}
