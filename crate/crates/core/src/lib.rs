//! Operators, relaxometry, phantoms, metrics and file formats for accelerated
//! quantitative cardiac MRI.

pub mod error;
pub mod io;
pub mod metrics;
pub mod mri_ops;
pub mod phantom;
pub mod relaxometry;
pub mod stats;

pub use error::{Error, Result};
