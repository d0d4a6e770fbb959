//! Unrolled variational reconstruction of undersampled multi-coil k-space,
//! the relaxometry mapping network and their training procedures.

pub mod benchmark;
pub mod checkpoint;
pub mod convert;
mod error;
pub mod losses;
pub mod mapping;
pub mod ops;
pub mod train;
pub mod varnet;

pub use checkpoint::ReconModel;
pub use error::{ReconError, Result};
pub use losses::{loss_recon, loss_relax, loss_total, Guidance, LossWeights};
pub use mapping::{train_mapping, MappingConfig, MappingModel, MappingNet, TrainOptions};
pub use train::{train_recon, EpochLog, ReconDataset, ReconRun, ReconTraining, TrainSample};
pub use varnet::{Prepared, ReconState, Reconstruction, RefinerConfig, VarNet, VarNetConfig};
