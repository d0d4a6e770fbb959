//! Minimal reverse-mode autodiff over `f64` tensors, with the convolutional
//! building blocks, U-Net / ConvGRU architectures and the Adam optimizer used
//! by the reconstruction and mapping networks.

mod conv;
mod error;
pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_params, GradCheck};
pub use graph::{sigmoid, softplus, Activation, BackwardCtx, BackwardFn, Graph, Var};
pub use layers::{Architecture, ConvGru, NetworkConfig, UNet};
pub use optim::Adam;
pub use params::{conv, glorot_uniform, init_conv, Bound, ParamStore};
pub use tensor::Tensor;
