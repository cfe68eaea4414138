//! Recurrent per-agent trunk shared by all agents.
//!
//! The same topology serves two roles with independent parameter sets: as
//! the alter-ego utility network its outputs are per-action values, and as
//! the ego policy network its outputs are logits. Inputs are the local
//! observation concatenated with a one-hot agent id and the one-hot
//! previous own action (zeros at t=0), so one parameter set can drive all
//! agents.

use rand::Rng;

use super::Linear;
use crate::autodiff::{gru_step, GruParams, Tensor, TensorError};

pub struct AgentNet {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_actions: usize,
    fc1: Linear,
    gru: GruParams,
    fc2: Linear,
}

impl AgentNet {
    pub fn init(
        input_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> AgentNet {
        assert_eq!(embed_dim, hidden_dim, "trunk embeds straight into the recurrent state");
        AgentNet {
            input_dim,
            hidden_dim,
            n_actions,
            fc1: Linear::init(input_dim, embed_dim, rng),
            gru: GruParams::init(embed_dim, hidden_dim, rng),
            fc2: Linear::init(hidden_dim, n_actions, rng),
        }
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(&[rows, self.hidden_dim])
    }

    /// One recurrent step: returns `(output [rows, n_actions], next hidden)`.
    pub fn step(&self, x: &Tensor, hidden: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let e = self.fc1.forward(x)?.relu();
        let h = gru_step(&e, hidden, &self.gru)?;
        let out = self.fc2.forward(&h)?;
        Ok((out, h))
    }

    /// Unrolls over a whole padded sequence, hidden state starting at zero.
    /// Returns one `[rows_t, n_actions]` tensor per timestep. Row counts may
    /// shrink between consecutive steps (episodes sorted longest-first in
    /// the batch expire from the bottom); the hidden state is sliced down
    /// accordingly.
    pub fn forward_seq(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>, TensorError> {
        let rows = inputs.first().map(|x| x.shape()[0]).unwrap_or(0);
        let mut h = self.initial_hidden(rows);
        let mut outs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let r = x.shape()[0];
            if r < h.shape()[0] {
                h = h.slice_rows(r)?;
            }
            let (out, next_h) = self.step(x, &h)?;
            outs.push(out);
            h = next_h;
        }
        Ok(outs)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.fc1.parameters();
        p.extend(self.gru.parameters());
        p.extend(self.fc2.parameters());
        p
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let names = [
            "fc1.w", "fc1.b", "gru.w_ir", "gru.w_iz", "gru.w_in", "gru.w_hr", "gru.w_hz",
            "gru.w_hn", "gru.b_ir", "gru.b_iz", "gru.b_in", "gru.b_hr", "gru.b_hz", "gru.b_hn",
            "fc2.w", "fc2.b",
        ];
        names
            .iter()
            .zip(self.parameters())
            .map(|(n, t)| (format!("{prefix}.{n}"), t))
            .collect()
    }

    /// Constant-parameter copy for no-grad evaluation (rollouts, search).
    pub fn detached(&self) -> AgentNet {
        let rebuild = |params: &[Tensor]| AgentNet {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            n_actions: self.n_actions,
            fc1: Linear { w: params[0].clone(), b: params[1].clone() },
            gru: GruParams {
                w_ir: params[2].clone(),
                w_iz: params[3].clone(),
                w_in: params[4].clone(),
                w_hr: params[5].clone(),
                w_hz: params[6].clone(),
                w_hn: params[7].clone(),
                b_ir: params[8].clone(),
                b_iz: params[9].clone(),
                b_in: params[10].clone(),
                b_hr: params[11].clone(),
                b_hz: params[12].clone(),
                b_hn: params[13].clone(),
            },
            fc2: Linear { w: params[14].clone(), b: params[15].clone() },
        };
        rebuild(&super::detach_params(&self.parameters()))
    }
}

/// Builds the `[rows, input_dim]` trunk input for one timestep: observation,
/// one-hot agent id, one-hot previous own action. Rows are ordered batch
/// entry major, agent minor.
pub fn build_agent_inputs(
    obs: &[&[f64]],
    obs_dim: usize,
    agent_ids: &[usize],
    n_agents: usize,
    prev_actions: &[Option<usize>],
    n_actions: usize,
) -> Tensor {
    let rows = obs.len();
    let width = obs_dim + n_agents + n_actions;
    let mut data = vec![0.0; rows * width];
    for r in 0..rows {
        let row = &mut data[r * width..(r + 1) * width];
        row[..obs_dim].copy_from_slice(obs[r]);
        row[obs_dim + agent_ids[r]] = 1.0;
        if let Some(a) = prev_actions[r] {
            row[obs_dim + n_agents + a] = 1.0;
        }
    }
    Tensor::from_vec(&[rows, width], data).unwrap()
}
