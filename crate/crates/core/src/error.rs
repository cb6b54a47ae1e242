use std::path::PathBuf;

use thiserror::Error;

use crate::axis::vlm::TranscriptEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("render error: {0}")]
    Render(String),

    #[error("vlm transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("vlm protocol error: {message}")]
    Protocol {
        message: String,
        transcript: Vec<TranscriptEntry>,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("degenerate repair: erosion would remove {:.1}% of the moving asset", .fraction * 100.0)]
    DegenerateRepair { fraction: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
