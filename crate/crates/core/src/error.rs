use std::path::Path;

/// Errors produced by the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),

    /// Malformed raster payload; `offset` is the byte position of the fault.
    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("{path}: invalid field `{field}`: {message}")]
    Validation {
        path: String,
        field: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn validation(
        path: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
