use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes dimension and numeric errors with the name of the layer
    /// that raised them.
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{layer}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{layer}: {m}")),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image { .. } | Error::Format(_) => 2,
            Error::Dimension(_) => 3,
            Error::Config { .. } => 4,
            Error::Numeric(_) | Error::Domain(_) => 5,
        }
    }
}

pub(crate) trait LayerContext<T> {
    fn layer(self, name: &str) -> Result<T>;
}

impl<T> LayerContext<T> for Result<T> {
    fn layer(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_layer(name))
    }
}
