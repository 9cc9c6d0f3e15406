//! Diagnostics for transfer-learned CNNs: layer-conductance attributions,
//! important neuron/weight extraction, cross-model neuron similarity, domain
//! discriminability and instance projections, plus the pipeline that bundles
//! them into analysis artifacts.

pub mod abstraction;
pub mod attribution;
pub mod comparison;
pub mod container;
pub mod data;
pub mod discriminability;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod projection;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
