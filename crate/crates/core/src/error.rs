use std::fmt;

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
    Usage,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ErrorKind::Config => "configuration",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Io => "i/o",
            ErrorKind::Usage => "usage",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Tensor or layer shapes do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("undefined score: {0}")]
    UndefinedScore(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Structural(_) => ErrorKind::Config,
            Error::Data(_) | Error::Index(_) | Error::Format(_) | Error::UnsupportedVersion { .. } => {
                ErrorKind::Data
            }
            Error::Numeric(_) | Error::UndefinedScore(_) => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            Error::Usage(_) => ErrorKind::Usage,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
