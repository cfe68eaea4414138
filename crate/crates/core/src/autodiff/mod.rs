//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Just enough machinery for the small MLP/GRU/hypernetwork models in this
//! crate: a dynamically built computation graph per forward pass, additive
//! gradient accumulation, an RMSProp optimizer and global-norm clipping.
//! No views, no broadcasting beyond row-bias addition, no graph reuse.

mod gradcheck;
mod gru;
mod optim;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_subset, GradCheckReport};
pub use gru::{gru_step, GruParams};
pub use optim::{clip_global_norm, RmsProp};
pub use tensor::{
    cross_entropy, mse, softmax_and_softmin, Tensor, TensorError,
};
