use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured input (corpus, model file, config) could not be parsed.
    #[error("{what}, line {line}: {message}")]
    Parse {
        what: String,
        line: usize,
        message: String,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical routine failed (singular system, divergence, NaN).
    #[error("numerical failure in {what}: {message}")]
    Numerical { what: String, message: String },

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("stage `{stage}` failed on {artifact}: {source}")]
    Stage {
        stage: String,
        artifact: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn numerical(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            what: what.into(),
            message: message.into(),
        }
    }

    /// Validation errors (bad input or configuration) map to exit status 1,
    /// everything else to 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. } | Error::Invalid { .. } | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}
