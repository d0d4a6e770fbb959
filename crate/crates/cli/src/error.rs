use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] qmri_core::Error),
    #[error(transparent)]
    Recon(#[from] qmri_recon::ReconError),
}

impl CliError {
    /// 2 for filesystem failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let io = match self {
            CliError::Core(e) => e.is_io(),
            CliError::Recon(e) => e.is_io(),
            CliError::Usage(_) => false,
        };
        if io {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
