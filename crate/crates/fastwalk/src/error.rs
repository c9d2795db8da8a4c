use std::path::PathBuf;

use fastwalk_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: checksum mismatch (stored {stored:016x}, computed {computed:016x})", path.display())]
    ChecksumMismatch { path: PathBuf, stored: u64, computed: u64 },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format { path: path.into(), message: message.into() }
    }

    /// Whether the failure is numerical rather than a bad argument.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Self::Core(
                CoreError::NotConverged { .. }
                    | CoreError::EigNotConverged { .. }
                    | CoreError::SingularSystem
                    | CoreError::SingularSmallSystem { .. }
                    | CoreError::DegenerateGraph { .. }
                    | CoreError::ZeroVector
                    | CoreError::EmptyBasis
                    | CoreError::Source(_)
            )
        )
    }

    /// Process exit code: 1 usage, 2 I/O or format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Format { .. } | Self::ChecksumMismatch { .. } => 2,
            _ if self.is_numeric() => 3,
            _ => 1,
        }
    }
}
