//! Train threshold-ReLU networks, convert them to soft-reset integrate-and-fire spiking
//! networks, and measure what the conversion costs.

pub mod analysis;
pub mod ann;
pub mod convert;
pub mod dataset;
pub mod error;
pub mod numerics;
pub mod snn;
pub mod workbench;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use numerics::Tensor;
