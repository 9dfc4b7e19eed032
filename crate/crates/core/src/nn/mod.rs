//! Dense classifier stack for training normalization layers end to end.

pub mod dense;
pub mod loss;
pub mod model;
pub mod sgd;

pub use dense::{relu_backward, DenseLayer, Relu};
pub use loss::{count_errors, predictions, softmax_xent};
pub use model::{Layer, Model, ModelSpec};
pub use sgd::{default_milestones, lr_schedule, Sgd, SgdConfig};
