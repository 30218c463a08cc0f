use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed file contents. `location` names the file and, where it
    /// applies, the line or record.
    #[error("{location}: {message}")]
    Format { location: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("no ground-truth objects for class `{0}`")]
    NoGroundTruth(String),

    #[error("synthetic spec infeasible: {0}")]
    Infeasible(String),

    #[error("detector failed on scene `{scene_id}`: {message}")]
    Mining { scene_id: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }
}
