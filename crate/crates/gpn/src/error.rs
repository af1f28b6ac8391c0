use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gpn_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: String, expected: u32 },
    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> u8 {
        use gpn_core::Error as C;
        match self {
            Error::Config(_) => 3,
            Error::Io { .. } => 4,
            Error::Parse { .. } => 5,
            Error::UnsupportedVersion { .. } => 6,
            Error::Core(e) => match e {
                C::SearchFailed(_) => 7,
                C::TrainingDiverged { .. } => 8,
                C::InsufficientData { .. } | C::InsufficientTrials(_) | C::EmptyRepertoire => 9,
                C::CholeskyFailure { .. } | C::DegenerateSample => 10,
                _ => 11,
            },
        }
    }
}
