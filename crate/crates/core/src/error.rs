use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("query ({lat}, {lon}) lies outside the DEM grid")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training set must contain both classes")]
    SingleClass,

    #[error("solver did not converge after {iterations} iterations (worst KKT violation {worst_violation:.3e})")]
    NotConverged {
        iterations: usize,
        worst_violation: f64,
    },

    #[error("unknown {kind} id {id}")]
    UnknownTarget { kind: &'static str, id: u32 },

    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),

    #[error("class too small: {have} items, need more than {need}")]
    ClassTooSmall { have: usize, need: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
