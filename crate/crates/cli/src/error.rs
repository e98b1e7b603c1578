use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] crowdspeak::Error),

    #[error("{}: {msg}", path.display())]
    MissingInput { path: PathBuf, msg: String },

    #[error("{}: {msg}", path.display())]
    BadInput { path: PathBuf, msg: String },

    #[error("invalid config {}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },

    #[error("{0}")]
    Validation(String),

    #[error("artifacts come from different configs:\n{0}\n(rerun the stages or pass --force)")]
    HashMismatch(String),

    #[error("{} is locked by another run (remove the lock file if that run died)", .0.display())]
    Locked(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return CliError::MissingInput {
                path,
                msg: "not found".into(),
            };
        }
        CliError::Io { path, source }
    }

    /// 2: missing input or unreadable format; 3: validation; 4: leakage.
    pub fn exit_code(&self) -> i32 {
        use crowdspeak::Error as E;
        match self {
            CliError::MissingInput { .. } | CliError::BadInput { .. } => 2,
            CliError::Config { .. } | CliError::Validation(_) | CliError::HashMismatch(_) => 3,
            CliError::Locked(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Parse { .. }
                | E::Schema(_)
                | E::Format { .. }
                | E::Json(_)
                | E::MissingData(_) => 2,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                E::Io { .. } => 1,
                E::Leakage(_) => 4,
                E::Config(_)
                | E::Range(_)
                | E::Shape(_)
                | E::Geometry(_)
                | E::Degenerate(_)
                | E::EmptyInput(_) => 3,
                E::Fit(_) | E::Divergence(_) => 1,
            },
        }
    }
}
