use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input file is structurally unusable (missing or wrong header).
    #[error("format error in {source_name}: {message}")]
    Format { source_name: String, message: String },

    /// A single row could not be parsed.
    #[error("{source_name} line {line}: {message}")]
    Row {
        source_name: String,
        line: u64,
        message: String,
    },

    /// Parsed data violates a domain rule.
    #[error("data error: {0}")]
    Data(String),

    /// Inconsistent architecture, mask, or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared during forward or training.
    #[error("numeric failure at {location}: {message}")]
    Numeric { location: String, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(source_name: &str, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn row(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Row {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Collects non-fatal warnings emitted while cleaning data.
///
/// Every warning is also forwarded to the `log` facade.
#[derive(Debug, Default, Clone)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn is_empty(&self) -> bool {
        self.warnings.is_empty()
    }
}
