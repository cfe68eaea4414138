//! Neural architectures: recurrent agent trunks (shared across agents),
//! hypernetwork mixing networks, and the reconstruction auto-encoder used
//! for anti-ego exploration.

mod agent;
mod autoencoder;
mod bundle;
pub mod checkpoint;
mod mixer;

use rand::Rng;

pub use agent::{build_agent_inputs, AgentNet};
pub use autoencoder::AutoEncoder;
pub use bundle::{BaselineNets, DaveNets, MixerKind, NetDims};
pub(crate) use bundle::uniform_action_count;
pub use mixer::{build_cond_row, HyperMixer};

use crate::autodiff::{Tensor, TensorError};

/// Fully connected layer `y = x W + b`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Linear {
            w: Tensor::param(&[fan_in, fan_out], w).unwrap(),
            b: Tensor::param(&[fan_out], b).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.matmul(&self.w)?.add_bias(&self.b)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.w.clone(), self.b.clone()]
    }
}

/// Copies values from `src` parameters into `dst`, index-aligned.
pub(crate) fn copy_params(src: &[Tensor], dst: &[Tensor]) {
    assert_eq!(src.len(), dst.len(), "parameter lists differ in length");
    for (s, d) in src.iter().zip(dst) {
        d.set_data(&s.to_vec());
    }
}

/// Detached (constant) copies of a parameter list, preserving order.
pub(crate) fn detach_params(params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| p.detach()).collect()
}
