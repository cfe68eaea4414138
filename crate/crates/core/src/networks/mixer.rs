//! Two-layer mixing network with hypernetwork-generated weights.
//!
//! One implementation covers three variants:
//! - unconstrained mixer conditioned on (state, joint action) — the
//!   IGM-free mixer used by DAVE;
//! - monotonic mixer conditioned on state only, generated weights passed
//!   through absolute value — the QMIX baseline;
//! - unconstrained mixer conditioned on state only — the naive IGM-free
//!   QMIX control.

use rand::Rng;

use super::Linear;
use crate::autodiff::{Tensor, TensorError};

pub struct HyperMixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dim_total: usize,
    pub mix_hidden: usize,
    /// Hypernetworks see the joint action one-hot next to the state.
    pub cond_on_action: bool,
    /// Generated weights pass through |.|, making Q_tot monotone in each
    /// utility.
    pub monotonic: bool,
    hyper_w1: (Linear, Linear),
    hyper_b1: Linear,
    hyper_w2: (Linear, Linear),
    hyper_b2: (Linear, Linear),
}

impl HyperMixer {
    pub fn init(
        n_agents: usize,
        state_dim: usize,
        action_dim_total: usize,
        mix_hidden: usize,
        hyper_hidden: usize,
        cond_on_action: bool,
        monotonic: bool,
        rng: &mut impl Rng,
    ) -> HyperMixer {
        let cond = state_dim + if cond_on_action { action_dim_total } else { 0 };
        HyperMixer {
            n_agents,
            state_dim,
            action_dim_total,
            mix_hidden,
            cond_on_action,
            monotonic,
            hyper_w1: (
                Linear::init(cond, hyper_hidden, rng),
                Linear::init(hyper_hidden, n_agents * mix_hidden, rng),
            ),
            hyper_b1: Linear::init(cond, mix_hidden, rng),
            hyper_w2: (
                Linear::init(cond, hyper_hidden, rng),
                Linear::init(hyper_hidden, mix_hidden, rng),
            ),
            hyper_b2: (Linear::init(cond, hyper_hidden, rng), Linear::init(hyper_hidden, 1, rng)),
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.state_dim + if self.cond_on_action { self.action_dim_total } else { 0 }
    }

    /// Mixes per-agent chosen-action utilities `[rows, n_agents]` under
    /// conditioning input `[rows, cond_dim]` into `[rows, 1]` joint values.
    pub fn mix(&self, qs: &Tensor, cond: &Tensor) -> Result<Tensor, TensorError> {
        let mut w1 = self.hyper_w1.1.forward(&self.hyper_w1.0.forward(cond)?.relu())?;
        let mut w2 = self.hyper_w2.1.forward(&self.hyper_w2.0.forward(cond)?.relu())?;
        if self.monotonic {
            w1 = w1.abs();
            w2 = w2.abs();
        }
        let b1 = self.hyper_b1.forward(cond)?;
        let b2 = self.hyper_b2.1.forward(&self.hyper_b2.0.forward(cond)?.relu())?;
        let l1 = qs.batch_vec_mat(&w1, self.mix_hidden)?.add(&b1)?.elu();
        l1.batch_vec_mat(&w2, 1)?.add(&b2)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.hyper_w1.0.parameters();
        p.extend(self.hyper_w1.1.parameters());
        p.extend(self.hyper_b1.parameters());
        p.extend(self.hyper_w2.0.parameters());
        p.extend(self.hyper_w2.1.parameters());
        p.extend(self.hyper_b2.0.parameters());
        p.extend(self.hyper_b2.1.parameters());
        p
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let names = [
            "hyper_w1.0.w",
            "hyper_w1.0.b",
            "hyper_w1.1.w",
            "hyper_w1.1.b",
            "hyper_b1.w",
            "hyper_b1.b",
            "hyper_w2.0.w",
            "hyper_w2.0.b",
            "hyper_w2.1.w",
            "hyper_w2.1.b",
            "hyper_b2.0.w",
            "hyper_b2.0.b",
            "hyper_b2.1.w",
            "hyper_b2.1.b",
        ];
        names.iter().zip(self.parameters()).map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
    }

    pub fn detached(&self) -> HyperMixer {
        let p = super::detach_params(&self.parameters());
        HyperMixer {
            n_agents: self.n_agents,
            state_dim: self.state_dim,
            action_dim_total: self.action_dim_total,
            mix_hidden: self.mix_hidden,
            cond_on_action: self.cond_on_action,
            monotonic: self.monotonic,
            hyper_w1: (
                Linear { w: p[0].clone(), b: p[1].clone() },
                Linear { w: p[2].clone(), b: p[3].clone() },
            ),
            hyper_b1: Linear { w: p[4].clone(), b: p[5].clone() },
            hyper_w2: (
                Linear { w: p[6].clone(), b: p[7].clone() },
                Linear { w: p[8].clone(), b: p[9].clone() },
            ),
            hyper_b2: (
                Linear { w: p[10].clone(), b: p[11].clone() },
                Linear { w: p[12].clone(), b: p[13].clone() },
            ),
        }
    }
}

/// Builds the mixer conditioning rows: state, optionally followed by the
/// per-agent one-hot encodings of a joint action.
pub fn build_cond_row(
    out: &mut Vec<f64>,
    state: &[f64],
    joint_action: Option<&[usize]>,
    actions_per_agent: &[usize],
) {
    out.extend_from_slice(state);
    if let Some(joint) = joint_action {
        for (&a, &width) in joint.iter().zip(actions_per_agent) {
            let base = out.len();
            out.resize(base + width, 0.0);
            out[base + a] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixer(cond_on_action: bool, monotonic: bool, seed: u64) -> HyperMixer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HyperMixer::init(2, 3, 6, 8, 8, cond_on_action, monotonic, &mut rng)
    }

    fn mix_value(m: &HyperMixer, qs: &[f64], cond: &[f64]) -> f64 {
        let q = Tensor::from_vec(&[1, 2], qs.to_vec()).unwrap();
        let c = Tensor::from_vec(&[1, m.cond_dim()], cond.to_vec()).unwrap();
        m.mix(&q, &c).unwrap().item()
    }

    #[test]
    fn zeroed_hypernet_outputs_final_bias() {
        let m = mixer(false, true, 0);
        for p in m.parameters() {
            p.set_data(&vec![0.0; p.numel()]);
        }
        // Poke only the final bias head's output bias.
        m.hyper_b2.1.b.set_data(&[4.25]);
        for qs in [[0.0, 0.0], [1.0, -3.0], [100.0, 7.0]] {
            assert_eq!(mix_value(&m, &qs, &[0.2, 0.4, 0.6]), 4.25);
        }
    }

    #[test]
    fn monotonic_mixer_has_nonnegative_utility_gradients() {
        let m = mixer(false, true, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 1e-6;
        for _ in 0..1000 {
            let cond: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let qs: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            for a in 0..2 {
                let mut hi = qs.clone();
                hi[a] += eps;
                let mut lo = qs.clone();
                lo[a] -= eps;
                let d = mix_value(&m, &hi, &cond) - mix_value(&m, &lo, &cond);
                assert!(d >= -1e-12, "monotonicity violated: {d}");
            }
        }
    }

    #[test]
    fn unconstrained_mixer_can_decrease_in_a_utility() {
        // With sign-free generated weights, some instance must decrease as a
        // utility increases.
        let mut found = false;
        for seed in 0..20 {
            let m = mixer(true, false, seed);
            let cond = vec![0.1; m.cond_dim()];
            let base = mix_value(&m, &[0.0, 0.0], &cond);
            let up = mix_value(&m, &[1.0, 0.0], &cond);
            if up < base {
                found = true;
                break;
            }
        }
        assert!(found, "no decreasing direction found in 20 random unconstrained mixers");
    }

    #[test]
    fn action_conditioning_changes_generated_weights() {
        let m = mixer(true, false, 3);
        let mut c1 = vec![1.0, 0.0, 0.5];
        build_cond_row(&mut c1, &[], Some(&[0, 1]), &[3, 3]);
        let mut c2 = vec![1.0, 0.0, 0.5];
        build_cond_row(&mut c2, &[], Some(&[2, 1]), &[3, 3]);
        let qs = [0.7, -0.3];
        assert_ne!(mix_value(&m, &qs, &c1), mix_value(&m, &qs, &c2));
    }

    #[test]
    fn cond_row_layout() {
        let mut row = Vec::new();
        build_cond_row(&mut row, &[0.5, 0.25], Some(&[1, 0]), &[3, 2]);
        assert_eq!(row, vec![0.5, 0.25, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }
}
