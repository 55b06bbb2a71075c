use std::path::{Path, PathBuf};

use stereogc::objective::OptimizeError;

#[derive(thiserror::Error, Debug)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] stereogc::Error),
    #[error("optimization diverged at iteration {0}")]
    Diverged(usize),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        HarnessError::Usage(msg.into())
    }

    /// Process exit status: 1 usage, 2 IO, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Core(stereogc::Error::InvalidArgument(_)) => 1,
            HarnessError::Io { .. } | HarnessError::Format { .. } => 2,
            HarnessError::Core(_) | HarnessError::Diverged(_) => 3,
        }
    }
}

impl From<OptimizeError> for HarnessError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Objective(e) => e.into(),
            OptimizeError::Diverged { iteration, .. } => HarnessError::Diverged(iteration),
        }
    }
}
