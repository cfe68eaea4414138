//! State-action reconstruction auto-encoder.
//!
//! Encodes a (state, joint-action one-hot) pair through a low-dimensional
//! bottleneck and reconstructs both parts; the reconstruction loss doubles
//! as a visit-frequency estimate. Rarely seen pairs reconstruct poorly, so
//! a high loss marks a novel joint action.

use rand::Rng;

use super::Linear;
use crate::autodiff::{Tensor, TensorError};

pub struct AutoEncoder {
    pub state_dim: usize,
    pub actions_per_agent: Vec<usize>,
    pub code_dim: usize,
    enc1: Linear,
    enc2: Linear,
    dec1: Linear,
    dec_state: Linear,
    dec_actions: Vec<Linear>,
}

impl AutoEncoder {
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.actions_per_agent.iter().sum::<usize>()
    }

    pub fn init(
        state_dim: usize,
        actions_per_agent: &[usize],
        hidden: usize,
        code_dim: usize,
        rng: &mut impl Rng,
    ) -> AutoEncoder {
        let input_dim = state_dim + actions_per_agent.iter().sum::<usize>();
        // The bottleneck must be strictly narrower than the input or
        // reconstruction error stops discriminating visit frequency.
        let code_dim = code_dim.min(input_dim - 1);
        AutoEncoder {
            state_dim,
            actions_per_agent: actions_per_agent.to_vec(),
            code_dim,
            enc1: Linear::init(input_dim, hidden, rng),
            enc2: Linear::init(hidden, code_dim, rng),
            dec1: Linear::init(code_dim, hidden, rng),
            dec_state: Linear::init(hidden, state_dim, rng),
            dec_actions: actions_per_agent
                .iter()
                .map(|&a| Linear::init(hidden, a, rng))
                .collect(),
        }
    }

    /// Reconstructs a batch of inputs: returns the reconstructed state and
    /// one logit head per agent.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<Tensor>), TensorError> {
        let code = self.enc2.forward(&self.enc1.forward(input)?.relu())?;
        let h = self.dec1.forward(&code)?.relu();
        let recon_state = self.dec_state.forward(&h)?;
        let logits = self
            .dec_actions
            .iter()
            .map(|head| head.forward(&h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((recon_state, logits))
    }

    /// Reconstruction loss per row:
    /// `MSE(state, state') + sum_a CE(action_a, action_a')`, returned as
    /// `[rows, 1]` along with the reconstructions themselves.
    ///
    /// `actions[agent][row]` holds the executed action indices.
    pub fn autoencode(
        &self,
        states: &Tensor,
        actions: &[Vec<usize>],
    ) -> Result<(Tensor, Vec<Tensor>, Tensor), TensorError> {
        let rows = states.shape()[0];
        let input = self.build_input(states, actions)?;
        let (recon_state, logits) = self.forward(&input)?;
        let diff = recon_state.sub(states)?;
        let mut loss = diff.mul(&diff)?.sum_rows()?.scale(1.0 / self.state_dim as f64);
        for (head_logits, agent_actions) in logits.iter().zip(actions) {
            loss = loss.add(&head_logits.cross_entropy_rows(agent_actions)?)?;
        }
        let _ = rows;
        Ok((recon_state, logits, loss))
    }

    /// Assembles the `[rows, input_dim]` input matrix from a state batch and
    /// per-agent action indices.
    pub fn build_input(
        &self,
        states: &Tensor,
        actions: &[Vec<usize>],
    ) -> Result<Tensor, TensorError> {
        let rows = states.shape()[0];
        let width = self.input_dim();
        let mut data = vec![0.0; rows * width];
        {
            let s = states.data();
            for r in 0..rows {
                let row = &mut data[r * width..r * width + self.state_dim];
                row.copy_from_slice(&s[r * self.state_dim..(r + 1) * self.state_dim]);
            }
        }
        let mut offset = self.state_dim;
        for (agent, &a_dim) in self.actions_per_agent.iter().enumerate() {
            for r in 0..rows {
                let a = actions[agent][r];
                if a >= a_dim {
                    return Err(TensorError::IndexOutOfRange {
                        op: "autoencode",
                        index: a,
                        bound: a_dim,
                    });
                }
                data[r * width + offset + a] = 1.0;
            }
            offset += a_dim;
        }
        Tensor::from_vec(&[rows, width], data)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.enc1.parameters();
        p.extend(self.enc2.parameters());
        p.extend(self.dec1.parameters());
        p.extend(self.dec_state.parameters());
        for head in &self.dec_actions {
            p.extend(head.parameters());
        }
        p
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.enc1.w"), self.enc1.w.clone()),
            (format!("{prefix}.enc1.b"), self.enc1.b.clone()),
            (format!("{prefix}.enc2.w"), self.enc2.w.clone()),
            (format!("{prefix}.enc2.b"), self.enc2.b.clone()),
            (format!("{prefix}.dec1.w"), self.dec1.w.clone()),
            (format!("{prefix}.dec1.b"), self.dec1.b.clone()),
            (format!("{prefix}.dec_state.w"), self.dec_state.w.clone()),
            (format!("{prefix}.dec_state.b"), self.dec_state.b.clone()),
        ];
        for (a, head) in self.dec_actions.iter().enumerate() {
            out.push((format!("{prefix}.dec_act{a}.w"), head.w.clone()));
            out.push((format!("{prefix}.dec_act{a}.b"), head.b.clone()));
        }
        out
    }

    pub fn detached(&self) -> AutoEncoder {
        let detach = |l: &Linear| Linear { w: l.w.detach(), b: l.b.detach() };
        AutoEncoder {
            state_dim: self.state_dim,
            actions_per_agent: self.actions_per_agent.clone(),
            code_dim: self.code_dim,
            enc1: detach(&self.enc1),
            enc2: detach(&self.enc2),
            dec1: detach(&self.dec1),
            dec_state: detach(&self.dec_state),
            dec_actions: self.dec_actions.iter().map(detach).collect(),
        }
    }
}
