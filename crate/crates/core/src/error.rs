use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// The variant doubles as the machine-readable error class printed by the
/// command-line front end (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable lower-case class name, e.g. `format` or `io`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Range(_) => "range",
            Error::Param(_) => "param",
            Error::Geometry(_) => "geometry",
            Error::Shape(_) => "shape",
            Error::Size(_) => "size",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::Data(_) => "data",
            Error::Load(_) => "load",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the message with context (usually a file name), keeping the class.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Range(m) => Error::Range(format!("{ctx}: {m}")),
            Error::Param(m) => Error::Param(format!("{ctx}: {m}")),
            Error::Geometry(m) => Error::Geometry(format!("{ctx}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::Size(m) => Error::Size(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::State(m) => Error::State(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Load(m) => Error::Load(format!("{ctx}: {m}")),
            e @ Error::Io { .. } => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
