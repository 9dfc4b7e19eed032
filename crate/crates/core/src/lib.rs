//! Mode normalization and its baselines (batch, instance, layer, group
//! norm), with exact reverse-mode gradients, running-statistics handling, a
//! finite-difference gradient oracle, a small dense training stack and data
//! ingestion for synthetic multi-modal and IDX datasets.

pub mod data;
pub mod error;
pub mod gating;
pub mod gradcheck;
pub mod nn;
pub mod norm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Reduction, Rng, Tensor};
