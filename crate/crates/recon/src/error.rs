use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error(transparent)]
    Core(#[from] qmri_core::Error),
    #[error(transparent)]
    Nn(#[from] qmri_nn::NnError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset")]
    EmptyDataset,
}

impl ReconError {
    pub fn is_io(&self) -> bool {
        matches!(self, ReconError::Core(e) if e.is_io())
    }
}

pub type Result<T> = std::result::Result<T, ReconError>;
