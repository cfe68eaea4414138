//! Dec-POMDP environment interface and the didactic benchmark games.
//!
//! All environments here share one global reward, expose per-agent
//! observations plus a global state, and are deterministic given the seed
//! and the action sequence.

mod matrix;
mod multistep;

use std::fmt;

pub use matrix::{MatrixGameI, MatrixGameII};
pub use multistep::MultiStepMatrixGame;

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub actions_per_agent: Vec<usize>,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub episode_limit: usize,
}

impl EnvSpec {
    /// Total number of joint actions (product over agents).
    pub fn joint_action_count(&self) -> usize {
        self.actions_per_agent.iter().product()
    }

    /// Enumerates the full joint action space in row-major order
    /// (last agent varies fastest).
    pub fn enumerate_joint_actions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &a in &self.actions_per_agent {
            let mut next = Vec::with_capacity(out.len() * a);
            for prefix in &out {
                for u in 0..a {
                    let mut j = prefix.clone();
                    j.push(u);
                    next.push(j);
                }
            }
            out = next;
        }
        out
    }
}

/// Result of one environment transition. The reward is shared by all agents.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    /// `step` called after termination without an intervening reset.
    Terminated,
    /// An action index outside the agent's action range.
    InvalidAction { agent: usize, action: usize, bound: usize },
    /// Joint action with the wrong number of agents.
    WrongAgentCount { expected: usize, got: usize },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::Terminated => write!(f, "step called on a terminated episode; reset first"),
            EnvError::InvalidAction { agent, action, bound } => {
                write!(f, "agent {agent}: action {action} out of range (must be < {bound})")
            }
            EnvError::WrongAgentCount { expected, got } => {
                write!(f, "joint action has {got} entries, environment has {expected} agents")
            }
        }
    }
}

impl std::error::Error for EnvError {}

/// A cooperative multi-agent environment with shared reward.
pub trait Environment {
    fn env_info(&self) -> EnvSpec;

    /// Puts the environment in its initial state and returns
    /// `(state, per-agent observations)`. Deterministic given the seed.
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>);

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;

    /// Highest achievable undiscounted episode return; used by evaluation
    /// to flag optimal greedy policies.
    fn optimal_return(&self) -> f64;
}

pub(crate) fn validate_action(spec: &EnvSpec, joint_action: &[usize]) -> Result<(), EnvError> {
    if joint_action.len() != spec.n_agents {
        return Err(EnvError::WrongAgentCount { expected: spec.n_agents, got: joint_action.len() });
    }
    for (agent, (&action, &bound)) in
        joint_action.iter().zip(&spec.actions_per_agent).enumerate()
    {
        if action >= bound {
            return Err(EnvError::InvalidAction { agent, action, bound });
        }
    }
    Ok(())
}

/// One complete rollout: aligned per-timestep records plus the final
/// state/observations. `mask[t]` is 1 for real steps and 0 for padding; a
/// well-formed episode has a prefix of ones followed by zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `[T+1]` states; the last entry is the state after the final step.
    pub states: Vec<Vec<f64>>,
    /// `[T+1][n_agents]` observations.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `[T][n_agents]` executed joint actions.
    pub actions: Vec<Vec<usize>>,
    /// `[T]` shared rewards.
    pub rewards: Vec<f64>,
    /// `[T]` termination flags (true only where the environment ended).
    pub terminated: Vec<bool>,
    /// `[T]` valid-step mask.
    pub mask: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().zip(&self.mask).map(|(r, m)| r * m).sum()
    }

    /// Checks the structural invariants: aligned lengths, mask is a prefix
    /// of ones, actions within range.
    pub fn validate(&self, spec: &EnvSpec) -> Result<(), String> {
        let t = self.len();
        if t == 0 {
            return Err("episode has no steps".into());
        }
        if t > spec.episode_limit {
            return Err(format!("episode length {t} exceeds limit {}", spec.episode_limit));
        }
        if self.states.len() != t + 1 || self.obs.len() != t + 1 {
            return Err(format!(
                "episode with {t} steps needs {} states/observations, got {}/{}",
                t + 1,
                self.states.len(),
                self.obs.len()
            ));
        }
        if self.rewards.len() != t || self.terminated.len() != t || self.mask.len() != t {
            return Err("reward/termination/mask lengths disagree with actions".into());
        }
        let mut seen_zero = false;
        for &m in &self.mask {
            if m != 0.0 && m != 1.0 {
                return Err(format!("mask entries must be 0 or 1, got {m}"));
            }
            if m == 0.0 {
                seen_zero = true;
            } else if seen_zero {
                return Err("mask must be a prefix of ones followed by zeros".into());
            }
        }
        for joint in &self.actions {
            validate_action(spec, joint).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Runs a full episode under a policy callback and records it.
///
/// The callback receives `(t, per-agent observations, previous joint
/// action)` and returns the joint action for step `t`.
pub fn record_episode(
    env: &mut dyn Environment,
    seed: u64,
    mut policy: impl FnMut(usize, &[Vec<f64>], Option<&[usize]>) -> Vec<usize>,
) -> Result<Episode, EnvError> {
    let spec = env.env_info();
    let (state, obs) = env.reset(seed);
    let mut ep = Episode {
        states: vec![state],
        obs: vec![obs],
        actions: vec![],
        rewards: vec![],
        terminated: vec![],
        mask: vec![],
    };
    for t in 0..spec.episode_limit {
        let prev = if t == 0 { None } else { Some(ep.actions[t - 1].as_slice()) };
        let joint = policy(t, &ep.obs[t], prev);
        let res = env.step(&joint)?;
        ep.actions.push(joint);
        ep.rewards.push(res.reward);
        ep.terminated.push(res.terminated);
        ep.mask.push(1.0);
        ep.states.push(res.next_state);
        ep.obs.push(res.next_obs);
        if res.terminated {
            break;
        }
    }
    Ok(ep)
}

/// Environments selectable by name in configs: `matrix1`, `matrix2`
/// (difficulty `k`), and `multistep`.
pub fn make_env(name: &str, k: f64) -> Result<Box<dyn Environment>, String> {
    match name {
        "matrix1" => Ok(Box::new(MatrixGameI::new(k))),
        "matrix2" => Ok(Box::new(MatrixGameII::new(k))),
        "multistep" => Ok(Box::new(MultiStepMatrixGame::new())),
        other => Err(format!(
            "unknown environment '{other}'; available: matrix1, matrix2, multistep"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_action_enumeration_is_row_major() {
        let spec = EnvSpec {
            n_agents: 2,
            actions_per_agent: vec![2, 3],
            state_dim: 1,
            obs_dim: 1,
            episode_limit: 1,
        };
        let all = spec.enumerate_joint_actions();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[5], vec![1, 2]);
    }

    #[test]
    fn make_env_rejects_unknown_names() {
        let err = make_env("smac", 0.0).err().unwrap();
        assert!(err.contains("matrix1") && err.contains("multistep"));
    }
}
