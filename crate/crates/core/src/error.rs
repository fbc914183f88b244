use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    /// Malformed file content. `location` is a byte offset or a line number,
    /// depending on whether the format is binary or line-oriented.
    #[error("format error in {what} at {location}: {message}")]
    Format {
        what: String,
        location: Location,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at iteration {iteration}: {diagnostic}")]
    NonFiniteLoss { iteration: u64, diagnostic: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Offset(u64),
    Line(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Offset(o) => write!(f, "byte offset {o}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_offset(what: &str, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.to_string(),
            location: Location::Offset(offset),
            message: message.into(),
        }
    }

    pub fn at_line(what: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.to_string(),
            location: Location::Line(line),
            message: message.into(),
        }
    }

    /// Short machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::ProviderUnavailable(_) => "provider-unavailable",
            Error::Format { .. } => "format",
            Error::InvalidInput(_)
            | Error::InvalidConfig(_)
            | Error::InvalidVocabulary(_)
            | Error::EmptyDataset(_) => "validation",
            Error::NonFiniteLoss { .. } => "numeric",
        }
    }
}
