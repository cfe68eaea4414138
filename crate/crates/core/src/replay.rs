//! Episode-granularity FIFO replay buffer with uniform batch sampling.
//!
//! Episodes are stored whole because the recurrent trunks replay hidden
//! state from t=0; batches are padded to the longest sampled episode and
//! carry a valid-step mask.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;

use crate::envs::{EnvSpec, Episode};

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayError {
    /// Pushed episode violates the Episode invariants.
    MalformedEpisode(String),
    /// Not enough stored episodes to fill a batch yet.
    WarmupIncomplete { have: usize, need: usize },
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::MalformedEpisode(msg) => write!(f, "malformed episode: {msg}"),
            ReplayError::WarmupIncomplete { have, need } => {
                write!(f, "warm-up incomplete: buffer holds {have} episodes, batch needs {need}")
            }
        }
    }
}

impl std::error::Error for ReplayError {}

/// A sampled batch flattened into dense padded arrays.
///
/// Layouts: `states[b][t]` -> `states[(b*(t_max+1)+t)*state_dim ..]`,
/// `obs[b][t][agent]`, `actions[b][t][agent]`, and `[b][t]` for rewards,
/// termination flags and mask. Padding steps carry zero mask.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub n_episodes: usize,
    pub t_max: usize,
    pub n_agents: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub actions_per_agent: Vec<usize>,
    pub states: Vec<f64>,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<f64>,
    pub mask: Vec<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode], spec: &EnvSpec) -> EpisodeBatch {
        // Longest episodes first: trainers can then shrink per-timestep row
        // counts instead of processing padding.
        let mut episodes: Vec<&Episode> = episodes.to_vec();
        episodes.sort_by_key(|e| std::cmp::Reverse(e.len()));
        let episodes = &episodes[..];
        let b = episodes.len();
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let n = spec.n_agents;
        let (sd, od) = (spec.state_dim, spec.obs_dim);
        let mut batch = EpisodeBatch {
            n_episodes: b,
            t_max,
            n_agents: n,
            state_dim: sd,
            obs_dim: od,
            actions_per_agent: spec.actions_per_agent.clone(),
            states: vec![0.0; b * (t_max + 1) * sd],
            obs: vec![0.0; b * (t_max + 1) * n * od],
            actions: vec![0; b * t_max * n],
            rewards: vec![0.0; b * t_max],
            terminated: vec![0.0; b * t_max],
            mask: vec![0.0; b * t_max],
        };
        for (bi, ep) in episodes.iter().enumerate() {
            for t in 0..=ep.len() {
                let s_off = (bi * (t_max + 1) + t) * sd;
                batch.states[s_off..s_off + sd].copy_from_slice(&ep.states[t]);
                for a in 0..n {
                    let o_off = ((bi * (t_max + 1) + t) * n + a) * od;
                    batch.obs[o_off..o_off + od].copy_from_slice(&ep.obs[t][a]);
                }
            }
            for t in 0..ep.len() {
                for a in 0..n {
                    batch.actions[(bi * t_max + t) * n + a] = ep.actions[t][a];
                }
                batch.rewards[bi * t_max + t] = ep.rewards[t];
                batch.terminated[bi * t_max + t] = if ep.terminated[t] { 1.0 } else { 0.0 };
                batch.mask[bi * t_max + t] = ep.mask[t];
            }
        }
        batch
    }

    pub fn state_at(&self, b: usize, t: usize) -> &[f64] {
        let off = (b * (self.t_max + 1) + t) * self.state_dim;
        &self.states[off..off + self.state_dim]
    }

    pub fn obs_at(&self, b: usize, t: usize, agent: usize) -> &[f64] {
        let off = ((b * (self.t_max + 1) + t) * self.n_agents + agent) * self.obs_dim;
        &self.obs[off..off + self.obs_dim]
    }

    pub fn action_at(&self, b: usize, t: usize, agent: usize) -> usize {
        self.actions[(b * self.t_max + t) * self.n_agents + agent]
    }

    pub fn joint_action_at(&self, b: usize, t: usize) -> &[usize] {
        let off = (b * self.t_max + t) * self.n_agents;
        &self.actions[off..off + self.n_agents]
    }

    pub fn reward_at(&self, b: usize, t: usize) -> f64 {
        self.rewards[b * self.t_max + t]
    }

    pub fn terminated_at(&self, b: usize, t: usize) -> bool {
        self.terminated[b * self.t_max + t] != 0.0
    }

    pub fn mask_at(&self, b: usize, t: usize) -> f64 {
        self.mask[b * self.t_max + t]
    }

    pub fn mask_sum(&self) -> f64 {
        self.mask.iter().sum()
    }

    /// Valid-step count of one episode (mask is a validated ones-prefix).
    pub fn episode_len(&self, b: usize) -> usize {
        (0..self.t_max).take_while(|&t| self.mask_at(b, t) != 0.0).count()
    }

    /// Number of leading batch rows whose episodes still have data at
    /// timestep `t` (an observation exists at `t` iff `len >= t`). For
    /// batches sorted longest-first this is tight; for arbitrary batches it
    /// falls back to a correct upper bound.
    pub fn alive_at(&self, t: usize) -> usize {
        if t == 0 {
            return self.n_episodes;
        }
        (0..self.n_episodes)
            .rev()
            .find(|&b| self.episode_len(b) >= t)
            .map(|b| b + 1)
            .unwrap_or(0)
    }
}

/// FIFO ring of complete episodes with uniform sampling.
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    spec: EnvSpec,
    inserted: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, spec: EnvSpec) -> ReplayBuffer {
        ReplayBuffer { capacity, episodes: VecDeque::with_capacity(capacity), spec, inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Total number of episodes ever pushed (not capped by capacity).
    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn get(&self, idx: usize) -> Option<&Episode> {
        self.episodes.get(idx)
    }

    /// Stores one episode, evicting the oldest when full.
    pub fn push(&mut self, episode: Episode) -> Result<(), ReplayError> {
        episode.validate(&self.spec).map_err(ReplayError::MalformedEpisode)?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
        Ok(())
    }

    /// Uniform sample of `batch_size` distinct episodes, padded to the
    /// longest one.
    pub fn sample(
        &self,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<EpisodeBatch, ReplayError> {
        if self.episodes.len() < batch_size {
            return Err(ReplayError::WarmupIncomplete {
                have: self.episodes.len(),
                need: batch_size,
            });
        }
        let idx = rand::seq::index::sample(rng, self.episodes.len(), batch_size);
        let chosen: Vec<&Episode> = idx.iter().map(|i| &self.episodes[i]).collect();
        Ok(EpisodeBatch::from_episodes(&chosen, &self.spec))
    }
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
            episode_limit: 9,
        }
    }

    fn one_step_episode(tag: f64) -> Episode {
        Episode {
            states: vec![vec![tag], vec![tag]],
            obs: vec![vec![vec![tag], vec![tag]], vec![vec![tag], vec![tag]]],
            actions: vec![vec![0, 1]],
            rewards: vec![tag],
            terminated: vec![true],
            mask: vec![1.0],
        }
    }

    fn long_episode(len: usize) -> Episode {
        Episode {
            states: vec![vec![0.5]; len + 1],
            obs: vec![vec![vec![0.5], vec![0.5]]; len + 1],
            actions: vec![vec![1, 1]; len],
            rewards: vec![0.0; len],
            terminated: {
                let mut t = vec![false; len];
                *t.last_mut().unwrap() = true;
                t
            },
            mask: vec![1.0; len],
        }
    }

    #[test]
    fn push_and_fifo_eviction() {
        let mut buf = ReplayBuffer::new(5000, spec());
        buf.push(one_step_episode(0.0)).unwrap();
        assert_eq!(buf.len(), 1);

        let mut buf = ReplayBuffer::new(3, spec());
        for i in 0..4 {
            buf.push(one_step_episode(i as f64)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        // episode 0 evicted, oldest remaining is 1
        assert_eq!(buf.get(0).unwrap().rewards[0], 1.0);
        assert_eq!(buf.inserted(), 4);
    }

    #[test]
    fn pushed_episode_retrievable_bit_identical() {
        let mut buf = ReplayBuffer::new(10, spec());
        let ep = one_step_episode(3.25);
        buf.push(ep.clone()).unwrap();
        assert_eq!(buf.get(0).unwrap(), &ep);
    }

    #[test]
    fn malformed_episode_rejected() {
        let mut buf = ReplayBuffer::new(10, spec());
        let mut ep = one_step_episode(0.0);
        ep.mask = vec![0.0]; // mask must start with ones
        // zero-mask-only episodes break the prefix property once a one follows
        ep.mask = vec![0.5];
        assert!(buf.push(ep).is_err());

        let mut ep = one_step_episode(0.0);
        ep.actions = vec![vec![0, 5]];
        assert!(matches!(buf.push(ep), Err(ReplayError::MalformedEpisode(_))));
    }

    #[test]
    fn sample_before_warmup_errors() {
        let buf = ReplayBuffer::new(10, spec());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(4, &mut rng),
            Err(ReplayError::WarmupIncomplete { have: 0, need: 4 })
        ));
    }

    #[test]
    fn full_buffer_sample_is_a_permutation() {
        let mut buf = ReplayBuffer::new(32, spec());
        for i in 0..32 {
            buf.push(one_step_episode(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buf.sample(32, &mut rng).unwrap();
        let mut tags: Vec<f64> = (0..32).map(|b| batch.reward_at(b, 0)).collect();
        tags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<f64> = (0..32).map(|i| i as f64).collect();
        assert_eq!(tags, expected);
    }

    #[test]
    fn mixed_lengths_pad_with_zero_mask() {
        let mut buf = ReplayBuffer::new(8, spec());
        buf.push(one_step_episode(1.0)).unwrap();
        buf.push(long_episode(9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = buf.sample(2, &mut rng).unwrap();
        assert_eq!(batch.t_max, 9);
        let (short_b, long_b) =
            if batch.mask_at(0, 1) == 0.0 { (0, 1) } else { (1, 0) };
        assert_eq!(batch.mask_at(short_b, 0), 1.0);
        for t in 1..9 {
            assert_eq!(batch.mask_at(short_b, t), 0.0);
        }
        for t in 0..9 {
            assert_eq!(batch.mask_at(long_b, t), 1.0);
        }
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let mut buf = ReplayBuffer::new(100, spec());
        for i in 0..100 {
            buf.push(one_step_episode(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u64; 100];
        let draws = 100_000usize;
        let per_call = 10usize;
        for _ in 0..draws / per_call {
            let batch = buf.sample(per_call, &mut rng).unwrap();
            for b in 0..per_call {
                counts[batch.reward_at(b, 0) as usize] += 1;
            }
        }
        // Marginal selection probability is 1/100 per draw; allow 3 sigma.
        let n = draws as f64;
        let p = 0.01;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - n * p).abs();
            assert!(dev <= 3.0 * sigma, "episode {i}: count {c}, dev {dev:.1} > 3 sigma {sigma:.1}");
        }
    }
}
