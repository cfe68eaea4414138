//! Parameter bundles: every network a trainer owns, plus target copies.

use rand::Rng;

use super::{copy_params, AgentNet, AutoEncoder, HyperMixer};
use crate::autodiff::Tensor;
use crate::envs::EnvSpec;

/// Width settings for all networks. Defaults match the standard QMIX-scale
/// trunk: 64-unit embedding and recurrent state, 32-wide mixing layer,
/// 8-wide auto-encoder code (shrunk automatically for tiny inputs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetDims {
    pub embed: usize,
    pub rnn_hidden: usize,
    pub mix_hidden: usize,
    pub hyper_hidden: usize,
    pub ae_hidden: usize,
    pub ae_code: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            embed: 64,
            rnn_hidden: 64,
            mix_hidden: 32,
            hyper_hidden: 32,
            ae_hidden: 32,
            ae_code: 8,
        }
    }
}

/// Uniform per-agent action count; the shared trunk requires it.
pub(crate) fn uniform_action_count(spec: &EnvSpec) -> usize {
    let a = spec.actions_per_agent[0];
    assert!(
        spec.actions_per_agent.iter().all(|&x| x == a),
        "shared agent trunk requires equal action counts, got {:?}",
        spec.actions_per_agent
    );
    a
}

/// The mixing rule a baseline trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    /// QMIX: state-conditioned hypernetworks, absolute-value weights.
    Monotonic,
    /// VDN: plain sum of utilities, no parameters.
    Additive,
    /// Unconstrained QMIX: same hypernetworks, no absolute value. Keeps the
    /// per-agent greedy max even though nothing guarantees it is the joint
    /// argmax.
    IgmfreeNaive,
}

/// Everything the DAVE trainer owns: alter-ego utility net, ego policy net,
/// the (state, action)-conditioned unconstrained mixer, the exploration
/// auto-encoder, and target copies of the value path.
pub struct DaveNets {
    pub alter: AgentNet,
    pub ego: AgentNet,
    pub mixer: HyperMixer,
    pub autoencoder: AutoEncoder,
    pub target_alter: AgentNet,
    pub target_mixer: HyperMixer,
}

impl DaveNets {
    pub fn init(spec: &EnvSpec, dims: NetDims, rng: &mut impl Rng) -> DaveNets {
        let n_actions = uniform_action_count(spec);
        let input_dim = spec.obs_dim + spec.n_agents + n_actions;
        let action_total: usize = spec.actions_per_agent.iter().sum();
        let alter = AgentNet::init(input_dim, dims.embed, dims.rnn_hidden, n_actions, rng);
        let ego = AgentNet::init(input_dim, dims.embed, dims.rnn_hidden, n_actions, rng);
        let mixer = HyperMixer::init(
            spec.n_agents,
            spec.state_dim,
            action_total,
            dims.mix_hidden,
            dims.hyper_hidden,
            true,
            false,
            rng,
        );
        let autoencoder =
            AutoEncoder::init(spec.state_dim, &spec.actions_per_agent, dims.ae_hidden, dims.ae_code, rng);
        let target_alter = alter.detached();
        let target_mixer = mixer.detached();
        DaveNets { alter, ego, mixer, autoencoder, target_alter, target_mixer }
    }

    /// Parameters updated by the alter-ego TD loss.
    pub fn alter_params(&self) -> Vec<Tensor> {
        let mut p = self.alter.parameters();
        p.extend(self.mixer.parameters());
        p
    }

    pub fn ego_params(&self) -> Vec<Tensor> {
        self.ego.parameters()
    }

    pub fn autoencoder_params(&self) -> Vec<Tensor> {
        self.autoencoder.parameters()
    }

    /// Copies the online value path into the target copies.
    pub fn sync_targets(&self) {
        copy_params(&self.alter.parameters(), &self.target_alter.parameters());
        copy_params(&self.mixer.parameters(), &self.target_mixer.parameters());
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = self.alter.named_parameters("alter");
        out.extend(self.ego.named_parameters("ego"));
        out.extend(self.mixer.named_parameters("mixer"));
        out.extend(self.autoencoder.named_parameters("autoencoder"));
        out
    }

    /// Restores online parameters by name, then re-syncs targets.
    pub fn load_named(&self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<(), String> {
        load_into(self.named_parameters(), entries)?;
        self.sync_targets();
        Ok(())
    }
}

/// Networks for the QMIX/VDN/naive baselines: one utility net, an optional
/// mixer, and target copies.
pub struct BaselineNets {
    pub kind: MixerKind,
    pub utility: AgentNet,
    pub mixer: Option<HyperMixer>,
    pub target_utility: AgentNet,
    pub target_mixer: Option<HyperMixer>,
}

impl BaselineNets {
    pub fn init(spec: &EnvSpec, dims: NetDims, kind: MixerKind, rng: &mut impl Rng) -> BaselineNets {
        let n_actions = uniform_action_count(spec);
        let input_dim = spec.obs_dim + spec.n_agents + n_actions;
        let utility = AgentNet::init(input_dim, dims.embed, dims.rnn_hidden, n_actions, rng);
        let mixer = match kind {
            MixerKind::Additive => None,
            MixerKind::Monotonic | MixerKind::IgmfreeNaive => Some(HyperMixer::init(
                spec.n_agents,
                spec.state_dim,
                spec.actions_per_agent.iter().sum(),
                dims.mix_hidden,
                dims.hyper_hidden,
                false,
                kind == MixerKind::Monotonic,
                rng,
            )),
        };
        let target_utility = utility.detached();
        let target_mixer = mixer.as_ref().map(|m| m.detached());
        BaselineNets { kind, utility, mixer, target_utility, target_mixer }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.utility.parameters();
        if let Some(m) = &self.mixer {
            p.extend(m.parameters());
        }
        p
    }

    pub fn sync_targets(&self) {
        copy_params(&self.utility.parameters(), &self.target_utility.parameters());
        if let (Some(m), Some(tm)) = (&self.mixer, &self.target_mixer) {
            copy_params(&m.parameters(), &tm.parameters());
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = self.utility.named_parameters("utility");
        if let Some(m) = &self.mixer {
            out.extend(m.named_parameters("mixer"));
        }
        out
    }

    pub fn load_named(&self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<(), String> {
        load_into(self.named_parameters(), entries)?;
        self.sync_targets();
        Ok(())
    }
}

fn load_into(
    named: Vec<(String, Tensor)>,
    entries: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<(), String> {
    for (name, tensor) in named {
        let entry = entries
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| format!("checkpoint is missing tensor '{name}'"))?;
        if entry.1 != tensor.shape() {
            return Err(format!(
                "checkpoint tensor '{name}' has shape {:?}, expected {:?}",
                entry.1,
                tensor.shape()
            ));
        }
        tensor.set_data(&entry.2);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            actions_per_agent: vec![3, 3],
            state_dim: 1,
            obs_dim: 1,
            episode_limit: 1,
        }
    }

    fn small_dims() -> NetDims {
        NetDims { embed: 8, rnn_hidden: 8, mix_hidden: 4, hyper_hidden: 4, ae_hidden: 8, ae_code: 4 }
    }

    #[test]
    fn ego_and_alter_parameter_sets_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = DaveNets::init(&spec(), small_dims(), &mut rng);
        let alter: Vec<Vec<f64>> = nets.alter_params().iter().map(|t| t.to_vec()).collect();
        for p in nets.ego_params() {
            let bumped: Vec<f64> = p.to_vec().iter().map(|v| v + 1.0).collect();
            p.set_data(&bumped);
        }
        let alter_after: Vec<Vec<f64>> = nets.alter_params().iter().map(|t| t.to_vec()).collect();
        assert_eq!(alter, alter_after, "mutating ego params must not touch alter params");
    }

    #[test]
    fn targets_equal_online_after_sync_and_are_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets = DaveNets::init(&spec(), small_dims(), &mut rng);
        for p in nets.alter_params() {
            let bumped: Vec<f64> = p.to_vec().iter().map(|v| v * 2.0 + 0.1).collect();
            p.set_data(&bumped);
        }
        // Targets still hold the init values.
        assert_ne!(nets.alter.parameters()[0].to_vec(), nets.target_alter.parameters()[0].to_vec());
        nets.sync_targets();
        for (online, target) in
            nets.alter.parameters().iter().zip(nets.target_alter.parameters())
        {
            assert_eq!(online.to_vec(), target.to_vec());
            assert!(!target.requires_grad());
        }
    }

    #[test]
    fn vdn_has_no_mixer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = BaselineNets::init(&spec(), small_dims(), MixerKind::Additive, &mut rng);
        assert!(nets.mixer.is_none());
        let nets = BaselineNets::init(&spec(), small_dims(), MixerKind::Monotonic, &mut rng);
        assert!(nets.mixer.as_ref().unwrap().monotonic);
        let nets = BaselineNets::init(&spec(), small_dims(), MixerKind::IgmfreeNaive, &mut rng);
        let m = nets.mixer.as_ref().unwrap();
        assert!(!m.monotonic && !m.cond_on_action);
    }
}
