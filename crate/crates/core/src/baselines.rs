//! Reference value-decomposition trainers: QMIX (monotonic mixer), VDN
//! (additive mixer) and the naive unconstrained-QMIX control, all with
//! epsilon-greedy exploration and the standard TD loss whose target takes
//! the per-agent greedy max — the IGM shortcut that DAVE removes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{clip_global_norm, RmsProp, Tensor};
use crate::config::TrainerConfig;
use crate::dave::{argmax_tie_lowest, masked_td_terms, TrainError};
use crate::envs::EnvSpec;
use crate::networks::{
    build_agent_inputs, build_cond_row, uniform_action_count, AgentNet, BaselineNets, MixerKind,
    NetDims,
};
use crate::replay::{EpisodeBatch, ReplayBuffer};
use crate::schedule::LinearSchedule;

/// Per-update record for the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineLossReport {
    pub loss_td: f64,
    pub epsilon: f64,
    pub buffer_size: usize,
}

/// Epsilon-greedy over a utility vector: uniform with probability epsilon,
/// otherwise the argmax (lowest index on ties).
pub fn baseline_act(q_values: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax_tie_lowest(q_values)
    }
}

/// Rollout-time policy for baselines: detached utility net with recurrent
/// state, independent epsilon-greedy per agent.
pub struct BaselineActor {
    net: AgentNet,
    hidden: Tensor,
    n_agents: usize,
    n_actions: usize,
}

impl BaselineActor {
    pub fn new(utility: &AgentNet, n_agents: usize) -> BaselineActor {
        let net = utility.detached();
        let hidden = net.initial_hidden(n_agents);
        let n_actions = net.n_actions;
        BaselineActor { net, hidden, n_agents, n_actions }
    }

    pub fn reset(&mut self) {
        self.hidden = self.net.initial_hidden(self.n_agents);
    }

    /// Advances the recurrent state and returns per-agent utility vectors.
    pub fn q_values(&mut self, obs: &[Vec<f64>], prev_joint: Option<&[usize]>) -> Vec<Vec<f64>> {
        let obs_refs: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
        let ids: Vec<usize> = (0..self.n_agents).collect();
        let prev: Vec<Option<usize>> = match prev_joint {
            None => vec![None; self.n_agents],
            Some(j) => j.iter().map(|&a| Some(a)).collect(),
        };
        let obs_dim = obs_refs.first().map(|o| o.len()).unwrap_or(0);
        let x = build_agent_inputs(&obs_refs, obs_dim, &ids, self.n_agents, &prev, self.n_actions);
        let (out, h) = self.net.step(&x, &self.hidden).expect("actor shapes are fixed");
        self.hidden = h;
        let flat = out.to_vec();
        (0..self.n_agents)
            .map(|a| flat[a * self.n_actions..(a + 1) * self.n_actions].to_vec())
            .collect()
    }

    pub fn act(&mut self, obs: &[Vec<f64>], prev_joint: Option<&[usize]>, epsilon: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.q_values(obs, prev_joint)
            .iter()
            .map(|q| baseline_act(q, epsilon, rng))
            .collect()
    }
}

/// QMIX/VDN/naive trainer. Shares the autodiff core, agent trunk, replay
/// buffer and harness with the DAVE trainer so comparisons isolate the
/// algorithmic difference.
pub struct BaselineTrainer {
    pub nets: BaselineNets,
    spec: EnvSpec,
    cfg: TrainerConfig,
    opt: RmsProp,
    pub epsilon_schedule: LinearSchedule,
    episodes_trained: u64,
    last_sync: u64,
    rng: ChaCha8Rng,
    n_actions: usize,
}

impl BaselineTrainer {
    pub fn new(spec: &EnvSpec, cfg: &TrainerConfig, kind: MixerKind, dims: NetDims) -> BaselineTrainer {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1111);
        let nets = BaselineNets::init(spec, dims, kind, &mut init_rng);
        let opt =
            RmsProp::new(&nets.parameters(), cfg.learning_rate, cfg.rmsprop_alpha, cfg.rmsprop_eps);
        BaselineTrainer {
            nets,
            spec: spec.clone(),
            cfg: cfg.clone(),
            opt,
            epsilon_schedule: LinearSchedule::new(
                cfg.epsilon_start,
                cfg.epsilon_end,
                cfg.epsilon_anneal_steps,
            ),
            episodes_trained: 0,
            last_sync: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_2222),
            n_actions: uniform_action_count(spec),
        }
    }

    pub fn actor(&self) -> BaselineActor {
        BaselineActor::new(&self.nets.utility, self.spec.n_agents)
    }

    pub fn epsilon_at(&self, progress: u64) -> f64 {
        self.epsilon_schedule.at(progress)
    }

    /// One TD update from a fresh batch. `progress` drives epsilon only
    /// through the actor; it is logged for the metrics row.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        progress: u64,
    ) -> Result<BaselineLossReport, TrainError> {
        let batch = buffer.sample(self.cfg.batch_size, &mut self.rng)?;
        let report = self.update_from_batch(&batch, progress, buffer.len())?;
        self.episodes_trained += 1;
        if self.episodes_trained - self.last_sync >= self.cfg.target_update_episodes {
            self.nets.sync_targets();
            self.last_sync = self.episodes_trained;
        }
        Ok(report)
    }

    pub fn update_from_batch(
        &mut self,
        batch: &EpisodeBatch,
        progress: u64,
        buffer_size: usize,
    ) -> Result<BaselineLossReport, TrainError> {
        let loss = self.compute_loss(batch)?;
        let params = self.nets.parameters();
        for p in &params {
            p.zero_grad();
        }
        loss.backward()?;
        clip_global_norm(&params, self.cfg.grad_norm_clip);
        self.opt.step(&params).expect("optimizer built from the same parameter list");
        Ok(BaselineLossReport {
            loss_td: loss.item(),
            epsilon: self.epsilon_schedule.at(progress),
            buffer_size,
        })
    }

    /// Masked TD loss with the per-agent greedy-max bootstrap.
    pub fn compute_loss(&mut self, batch: &EpisodeBatch) -> Result<Tensor, TrainError> {
        let b = batch.n_episodes;
        let t_max = batch.t_max;
        let n = batch.n_agents;
        let n_actions = self.n_actions;

        // Live row counts shrink with t (batches sort longest-first).
        let alive: Vec<usize> = (0..=t_max).map(|t| batch.alive_at(t)).collect();
        let xs: Vec<Tensor> = (0..=t_max)
            .map(|t| {
                let b_t = alive[t];
                let mut obs = Vec::with_capacity(b_t * n);
                let mut ids = Vec::with_capacity(b_t * n);
                let mut prev = Vec::with_capacity(b_t * n);
                for bi in 0..b_t {
                    for a in 0..n {
                        obs.push(batch.obs_at(bi, t, a));
                        ids.push(a);
                        prev.push(if t == 0 { None } else { Some(batch.action_at(bi, t - 1, a)) });
                    }
                }
                build_agent_inputs(&obs, batch.obs_dim, &ids, n, &prev, n_actions)
            })
            .collect();

        let online_outs = self.nets.utility.forward_seq(&xs)?;
        let tgt_outs = self.nets.target_utility.forward_seq(&xs)?;
        let tgt_vals: Vec<Vec<f64>> = tgt_outs.iter().map(|t| t.to_vec()).collect();

        // Bootstrap values: per-agent greedy max of the target utilities at
        // t+1, combined by the target mixer.
        let mut y = vec![0.0; b * t_max];
        for t in 0..t_max {
            let b_next = alive[t + 1];
            if b_next == 0 {
                continue;
            }
            let mut max_qs = Vec::with_capacity(b_next * n);
            let mut states = Vec::with_capacity(b_next * self.spec.state_dim);
            for bi in 0..b_next {
                for a in 0..n {
                    let row = bi * n + a;
                    let qa = &tgt_vals[t + 1][row * n_actions..(row + 1) * n_actions];
                    max_qs.push(qa[argmax_tie_lowest(qa)]);
                }
                states.extend_from_slice(batch.state_at(bi, t + 1));
            }
            let next_tot: Vec<f64> = match &self.nets.target_mixer {
                None => max_qs.chunks(n).map(|c| c.iter().sum()).collect(),
                Some(m) => {
                    let qs = Tensor::from_vec(&[b_next, n], max_qs)?;
                    let cond = Tensor::from_vec(&[b_next, self.spec.state_dim], states)?;
                    m.mix(&qs, &cond)?.to_vec()
                }
            };
            for bi in 0..b_next {
                let r = batch.reward_at(bi, t);
                let term = if batch.terminated_at(bi, t) { 0.0 } else { 1.0 };
                y[bi * t_max + t] = r + self.cfg.gamma * term * next_tot[bi];
            }
            // Terminal steps bootstrap nothing; fill their targets directly.
            for bi in b_next..b {
                y[bi * t_max + t] = batch.reward_at(bi, t);
            }
        }

        let mask_total = batch.mask_sum().max(1.0);
        let mut loss: Option<Tensor> = None;
        for t in 0..t_max {
            let b_t = alive[t];
            let rows_t = b_t * n;
            let gather_idx: Vec<usize> =
                (0..rows_t).map(|r| batch.action_at(r / n, t, r % n)).collect();
            let qs_t = online_outs[t].gather_rows(&gather_idx)?.reshape(&[b_t, n])?;
            let qtot_t = match &self.nets.mixer {
                None => qs_t.sum_rows()?,
                Some(m) => {
                    let mut states = Vec::with_capacity(b_t * self.spec.state_dim);
                    for bi in 0..b_t {
                        build_cond_row(&mut states, batch.state_at(bi, t), None, &[]);
                    }
                    let cond = Tensor::from_vec(&[b_t, self.spec.state_dim], states)?;
                    m.mix(&qs_t, &cond)?
                }
            };
            let y_slice: Vec<f64> = (0..b_t).map(|bi| y[bi * t_max + t]).collect();
            let mask_slice: Vec<f64> = (0..b_t).map(|bi| batch.mask_at(bi, t)).collect();
            let term = masked_td_terms(&qtot_t, &y_slice, &mask_slice)?;
            loss = Some(match loss.take() {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        Ok(loss.expect("t_max >= 1").scale(1.0 / mask_total))
    }
}
