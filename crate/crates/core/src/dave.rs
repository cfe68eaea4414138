//! The DAVE training procedure.
//!
//! Per update: sample an episode batch; draw the ego joint-action set
//! U_ego per state; fit the alter-ego utilities and the unconstrained
//! mixer against an Expected-SARSA-style target averaged over U_ego;
//! supervise the ego policy toward the best sampled joint action u*
//! plus, weighted by an annealed lambda, the most novel anti-ego sample;
//! and train the reconstruction auto-encoder on the visited state-action
//! pairs. Targets sync every `target_update_episodes` trained episodes.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{clip_global_norm, RmsProp, Tensor, TensorError};
use crate::config::TrainerConfig;
use crate::envs::EnvSpec;
use crate::networks::{
    build_agent_inputs, build_cond_row, uniform_action_count, AgentNet, AutoEncoder, DaveNets,
    HyperMixer, NetDims,
};
use crate::replay::{EpisodeBatch, ReplayBuffer, ReplayError};
use crate::schedule::LinearSchedule;

#[derive(Debug)]
pub enum TrainError {
    Replay(ReplayError),
    Tensor(TensorError),
    /// Sample size M must be at least 1.
    EmptySampleSet,
    /// p_optimal needs a probability strictly inside (0,1).
    ProbOutOfRange(f64),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Replay(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::EmptySampleSet => write!(f, "joint-action sample size M must be >= 1"),
            TrainError::ProbOutOfRange(p) => {
                write!(f, "joint-action probability must lie strictly in (0,1), got {p}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ReplayError> for TrainError {
    fn from(e: ReplayError) -> Self {
        TrainError::Replay(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

/// The M-sample set of joint actions drawn from the factorized per-agent
/// categoricals (softmax of the ego logits, or softmin when `anti`).
/// Duplicates are kept: these are i.i.d. draws.
#[derive(Debug, Clone)]
pub struct JointActionSet {
    pub actions: Vec<Vec<usize>>,
    pub anti: bool,
}

impl JointActionSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-update loss record consumed by the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss_alter: f64,
    pub loss_ego: f64,
    pub loss_recon: f64,
    pub lambda: f64,
    pub buffer_size: usize,
}

// ---- plain-float policy helpers ----

pub(crate) fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub(crate) fn softmin_vec(logits: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = logits.iter().map(|&x| -x).collect();
    softmax_vec(&neg)
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws M i.i.d. joint actions, each agent sampled independently from the
/// softmax (or softmin when `anti`) of its logits.
pub fn sample_joint_actions(
    logits_per_agent: &[Vec<f64>],
    m: usize,
    anti: bool,
    rng: &mut ChaCha8Rng,
) -> Result<JointActionSet, TrainError> {
    if m < 1 {
        return Err(TrainError::EmptySampleSet);
    }
    let probs: Vec<Vec<f64>> = logits_per_agent
        .iter()
        .map(|l| if anti { softmin_vec(l) } else { softmax_vec(l) })
        .collect();
    let mut actions = Vec::with_capacity(m);
    for _ in 0..m {
        actions.push(probs.iter().map(|p| sample_categorical(p, rng)).collect());
    }
    Ok(JointActionSet { actions, anti })
}

/// Samples one executed joint action from per-agent ego logits (no
/// epsilon-greedy; exploration happens through the anti-ego loss term).
pub fn act(logits_per_agent: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    logits_per_agent.iter().map(|l| sample_categorical(&softmax_vec(l), rng)).collect()
}

/// Greedy evaluation action: per-agent argmax, lowest index on ties.
pub fn act_greedy(logits_per_agent: &[Vec<f64>]) -> Vec<usize> {
    logits_per_agent.iter().map(|l| argmax_tie_lowest(l)).collect()
}

/// First-occurrence-ordered distinct joint actions of a sample set, with
/// counts and a per-sample slot map. Identical joint actions share one
/// evaluation, which leaves every argmax/mean over the set unchanged.
pub(crate) struct DistinctActions {
    pub actions: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    pub sample_slots: Vec<usize>,
}

impl DistinctActions {
    pub fn from_set(set: &JointActionSet) -> DistinctActions {
        let mut slots: HashMap<&[usize], usize> = HashMap::new();
        let mut actions: Vec<Vec<usize>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut sample_slots = Vec::with_capacity(set.actions.len());
        for joint in &set.actions {
            let slot = *slots.entry(joint.as_slice()).or_insert_with(|| {
                actions.push(joint.clone());
                counts.push(0);
                actions.len() - 1
            });
            counts[slot] += 1;
            sample_slots.push(slot);
        }
        DistinctActions { actions, counts, sample_slots }
    }

    /// Index of the best sample under per-slot values, scanning samples in
    /// draw order with strict improvement (ties break to the lowest index).
    pub fn best_sample(&self, slot_values: &[f64]) -> usize {
        let mut best = 0;
        for (i, &slot) in self.sample_slots.iter().enumerate().skip(1) {
            if slot_values[slot] > slot_values[self.sample_slots[best]] {
                best = i;
            }
        }
        best
    }

    /// Mean of the per-slot values over all samples (count-weighted).
    pub fn sample_mean(&self, slot_values: &[f64]) -> f64 {
        let total: f64 = self
            .counts
            .iter()
            .zip(slot_values)
            .map(|(&c, &v)| c as f64 * v)
            .sum();
        total / self.sample_slots.len() as f64
    }
}

/// Returns the set member maximizing `qtot` (ties to the lowest sample
/// index), together with its value. `qtot` is evaluated once per distinct
/// joint action.
pub fn select_best_joint_action(
    set: &JointActionSet,
    mut qtot: impl FnMut(&[usize]) -> f64,
) -> (Vec<usize>, f64) {
    let distinct = DistinctActions::from_set(set);
    let values: Vec<f64> = distinct.actions.iter().map(|u| qtot(u)).collect();
    let best = distinct.best_sample(&values);
    let slot = distinct.sample_slots[best];
    (set.actions[best].clone(), values[slot])
}

/// Returns the anti-ego set member with the highest reconstruction loss at
/// `state` (ties to the lowest sample index), plus that loss.
pub fn select_novel_action(
    state: &[f64],
    set: &JointActionSet,
    autoencoder: &AutoEncoder,
) -> Result<(Vec<usize>, f64), TrainError> {
    let distinct = DistinctActions::from_set(set);
    let rows = distinct.actions.len();
    let n_agents = distinct.actions[0].len();
    let mut states = Vec::with_capacity(rows * state.len());
    for _ in 0..rows {
        states.extend_from_slice(state);
    }
    let states = Tensor::from_vec(&[rows, state.len()], states)?;
    let actions: Vec<Vec<usize>> = (0..n_agents)
        .map(|a| distinct.actions.iter().map(|u| u[a]).collect())
        .collect();
    let (_, _, loss) = autoencoder.autoencode(&states, &actions)?;
    let values = loss.to_vec();
    let best = distinct.best_sample(&values);
    let slot = distinct.sample_slots[best];
    Ok((set.actions[best].clone(), values[slot]))
}

/// Probability that at least one of M i.i.d. draws hits a joint action of
/// probability `joint_prob`: `1 - (1 - p)^M`. Strictly increasing in M.
pub fn p_optimal(joint_prob: f64, m: usize) -> Result<f64, TrainError> {
    if !(joint_prob > 0.0 && joint_prob < 1.0) {
        return Err(TrainError::ProbOutOfRange(joint_prob));
    }
    if m < 1 {
        return Err(TrainError::EmptySampleSet);
    }
    Ok(1.0 - (1.0 - joint_prob).powi(m as i32))
}

/// Per-row ego supervision loss
/// `-sum_a log pi_a(u*_a) - lambda * sum_a log pi_a(u^_a)`, factorized over
/// agents. `logits[agent]` is `[rows, n_actions]`; target layouts are
/// `[agent][row]`. With `lambda == 0` this is exactly the plain
/// negative-log-likelihood of u*.
pub fn ego_loss_rows(
    logits: &[Tensor],
    u_star: &[Vec<usize>],
    u_hat: Option<&[Vec<usize>]>,
    lambda: f64,
) -> Result<Tensor, TensorError> {
    let mut total: Option<Tensor> = None;
    let accumulate = |term: Tensor, total: &mut Option<Tensor>| -> Result<(), TensorError> {
        *total = Some(match total.take() {
            None => term,
            Some(t) => t.add(&term)?,
        });
        Ok(())
    };
    for (agent, agent_logits) in logits.iter().enumerate() {
        accumulate(agent_logits.cross_entropy_rows(&u_star[agent])?, &mut total)?;
        if lambda > 0.0 {
            let hat = u_hat.expect("lambda > 0 requires anti-ego targets");
            accumulate(
                agent_logits.cross_entropy_rows(&hat[agent])?.scale(lambda),
                &mut total,
            )?;
        }
    }
    Ok(total.expect("at least one agent"))
}

/// Draws M i.i.d. factorized joint actions as packed ids, deduplicated in
/// first-occurrence order through the `slot_of` scratch table (reset on
/// exit). Appends distinct ids to `out_joints` and, when given, their
/// multiplicities to `out_counts`.
fn sample_packed(
    probs_per_agent: &[Vec<f64>],
    m: usize,
    rng: &mut ChaCha8Rng,
    strides: &[usize],
    slot_of: &mut [i32],
    out_joints: &mut Vec<u32>,
    mut out_counts: Option<&mut Vec<u32>>,
) -> Result<(), TrainError> {
    if m < 1 {
        return Err(TrainError::EmptySampleSet);
    }
    let start = out_joints.len();
    for _ in 0..m {
        let mut packed = 0usize;
        for (probs, &stride) in probs_per_agent.iter().zip(strides) {
            packed += sample_categorical(probs, rng) * stride;
        }
        let slot = slot_of[packed];
        if slot < 0 {
            slot_of[packed] = (out_joints.len() - start) as i32;
            out_joints.push(packed as u32);
            if let Some(counts) = out_counts.as_deref_mut() {
                counts.push(1);
            }
        } else if let Some(counts) = out_counts.as_deref_mut() {
            counts[start + slot as usize] += 1;
        }
    }
    for &j in &out_joints[start..] {
        slot_of[j as usize] = -1;
    }
    Ok(())
}

/// Sum of masked squared TD errors for one timestep column: the targets
/// are constants (no gradient flows through them) and zero-mask rows
/// contribute exactly nothing.
pub fn masked_td_terms(qtot: &Tensor, y: &[f64], mask: &[f64]) -> Result<Tensor, TensorError> {
    let rows = qtot.shape()[0];
    let y_t = Tensor::from_vec(&[rows, 1], y.to_vec())?;
    let mask_t = Tensor::from_vec(&[rows, 1], mask.to_vec())?;
    let diff = qtot.sub(&y_t)?;
    Ok(diff.mul(&diff)?.mul(&mask_t)?.sum())
}

/// Monte-Carlo estimate of `E_{u ~ pi}[qtot(u)]` over M factorized draws.
pub fn sample_mean_qtot(
    logits_per_agent: &[Vec<f64>],
    m: usize,
    rng: &mut ChaCha8Rng,
    qtot: impl FnMut(&[usize]) -> f64,
) -> Result<f64, TrainError> {
    let set = sample_joint_actions(logits_per_agent, m, false, rng)?;
    let distinct = DistinctActions::from_set(&set);
    let mut qtot = qtot;
    let values: Vec<f64> = distinct.actions.iter().map(|u| qtot(u)).collect();
    Ok(distinct.sample_mean(&values))
}

/// Exact enumeration of `E_{u ~ pi}[qtot(u)]` over the full joint space.
pub fn exact_expected_qtot(
    logits_per_agent: &[Vec<f64>],
    mut qtot: impl FnMut(&[usize]) -> f64,
) -> f64 {
    let probs: Vec<Vec<f64>> = logits_per_agent.iter().map(|l| softmax_vec(l)).collect();
    let mut joints = vec![(vec![], 1.0f64)];
    for agent_probs in &probs {
        let mut next = Vec::with_capacity(joints.len() * agent_probs.len());
        for (prefix, p) in &joints {
            for (a, &pa) in agent_probs.iter().enumerate() {
                let mut j = prefix.clone();
                j.push(a);
                next.push((j, p * pa));
            }
        }
        joints = next;
    }
    joints.iter().map(|(u, p)| p * qtot(u)).sum()
}

/// Rollout-time policy: a detached snapshot of the ego network carrying its
/// recurrent state across an episode.
pub struct EgoActor {
    net: AgentNet,
    hidden: Tensor,
    n_agents: usize,
    n_actions: usize,
}

impl EgoActor {
    pub fn new(ego: &AgentNet, n_agents: usize) -> EgoActor {
        let net = ego.detached();
        let hidden = net.initial_hidden(n_agents);
        let n_actions = net.n_actions;
        EgoActor { net, hidden, n_agents, n_actions }
    }

    pub fn reset(&mut self) {
        self.hidden = self.net.initial_hidden(self.n_agents);
    }

    /// Advances the recurrent state and returns per-agent logits for the
    /// current observations.
    pub fn logits(&mut self, obs: &[Vec<f64>], prev_joint: Option<&[usize]>) -> Vec<Vec<f64>> {
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
}

/// The DAVE trainer: networks, three optimizers, schedules and counters.
pub struct DaveTrainer {
    pub nets: DaveNets,
    spec: EnvSpec,
    cfg: TrainerConfig,
    opt_alter: RmsProp,
    opt_ego: RmsProp,
    opt_ae: RmsProp,
    lambda_schedule: LinearSchedule,
    episodes_trained: u64,
    last_sync: u64,
    rng: ChaCha8Rng,
    n_actions: usize,
}

impl DaveTrainer {
    pub fn new(spec: &EnvSpec, cfg: &TrainerConfig, dims: NetDims) -> DaveTrainer {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1111);
        let nets = DaveNets::init(spec, dims, &mut init_rng);
        let opt_alter = RmsProp::new(
            &nets.alter_params(),
            cfg.learning_rate,
            cfg.rmsprop_alpha,
            cfg.rmsprop_eps,
        );
        let opt_ego =
            RmsProp::new(&nets.ego_params(), cfg.learning_rate, cfg.rmsprop_alpha, cfg.rmsprop_eps);
        let opt_ae = RmsProp::new(
            &nets.autoencoder_params(),
            cfg.learning_rate,
            cfg.rmsprop_alpha,
            cfg.rmsprop_eps,
        );
        let n_actions = uniform_action_count(spec);
        DaveTrainer {
            nets,
            spec: spec.clone(),
            cfg: cfg.clone(),
            opt_alter,
            opt_ego,
            opt_ae,
            lambda_schedule: LinearSchedule::new(
                cfg.lambda_init,
                cfg.lambda_end,
                cfg.lambda_anneal_steps,
            ),
            episodes_trained: 0,
            last_sync: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_2222),
            n_actions,
        }
    }

    pub fn actor(&self) -> EgoActor {
        EgoActor::new(&self.nets.ego, self.spec.n_agents)
    }

    pub fn lambda_at(&self, progress: u64) -> f64 {
        self.lambda_schedule.at(progress)
    }

    pub fn episodes_trained(&self) -> u64 {
        self.episodes_trained
    }

    /// One full update (alter-ego + mixer, ego, auto-encoder) from a fresh
    /// batch. `progress` is the annealing clock: environment steps online,
    /// update count offline.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        progress: u64,
    ) -> Result<LossReport, TrainError> {
        let batch = buffer.sample(self.cfg.batch_size, &mut self.rng)?;
        let report = self.update_from_batch(&batch, progress, buffer.len())?;
        self.episodes_trained += 1;
        if self.episodes_trained - self.last_sync >= self.cfg.target_update_episodes {
            self.nets.sync_targets();
            self.last_sync = self.episodes_trained;
        }
        Ok(report)
    }

    /// Builds the three loss graphs from a batch without touching any
    /// parameter. Public so tests can check gradient confinement directly.
    pub fn compute_losses(
        &mut self,
        batch: &EpisodeBatch,
        lambda: f64,
    ) -> Result<(Tensor, Tensor, Tensor), TrainError> {
        let b = batch.n_episodes;
        let t_max = batch.t_max;
        let n = batch.n_agents;
        let n_actions = self.n_actions;
        let rows = b * n;

        // Shared trunk inputs for all three nets, one tensor per timestep.
        // Batches are sorted longest-episode-first, so the live row count
        // shrinks with t and padding is never processed.
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

        let alter_outs = self.nets.alter.forward_seq(&xs)?;
        let ego_outs = self.nets.ego.forward_seq(&xs)?;
        let tgt_outs = self.nets.target_alter.forward_seq(&xs)?;

        let alter_vals: Vec<Vec<f64>> = alter_outs.iter().map(|t| t.to_vec()).collect();
        let ego_vals: Vec<Vec<f64>> = ego_outs.iter().map(|t| t.to_vec()).collect();
        let tgt_vals: Vec<Vec<f64>> = tgt_outs.iter().map(|t| t.to_vec()).collect();

        let online_mixer = self.nets.mixer.detached();
        let ae_snapshot = self.nets.autoencoder.detached();
        let m = self.cfg.sample_size;
        let gamma = self.cfg.gamma;

        // Selection pass: per valid (episode, t) draw the ego set at t (for
        // u*), the ego set at t+1 (for the Expected-SARSA mean), and the
        // anti-ego set at t (for novelty), deduplicating joint actions into
        // three batched evaluation queues.
        let q_row = |vals: &[Vec<f64>], t: usize, bi: usize, joint: &[usize]| -> Vec<f64> {
            (0..n)
                .map(|a| {
                    let row = bi * n + a;
                    vals[t][row * n_actions + joint[a]]
                })
                .collect()
        };

        // Joint actions are packed into flat ids (row-major over agents) and
        // deduplicated through a scratch table; first-occurrence order makes
        // the per-distinct argmax equal to lowest-sample-index tie-breaking.
        let dims = &batch.actions_per_agent;
        let mut strides = vec![1usize; n];
        for a in (0..n.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let joint_count: usize = dims.iter().product();
        let mut slot_of: Vec<i32> = vec![-1; joint_count];
        let mut joint_buf = vec![0usize; n];

        struct Cell {
            bi: usize,
            t: usize,
            star_offset: usize,
            star_len: usize,
            next: Option<(usize, usize)>,
            anti: Option<(usize, usize)>,
        }

        let mut cells: Vec<Cell> = Vec::new();
        let mut star_joints: Vec<u32> = Vec::new();
        let mut next_joints: Vec<u32> = Vec::new();
        let mut next_counts: Vec<u32> = Vec::new();
        let mut anti_joints: Vec<u32> = Vec::new();
        let mut star_qs: Vec<f64> = Vec::new();
        let mut star_cond: Vec<f64> = Vec::new();
        let mut next_qs: Vec<f64> = Vec::new();
        let mut next_cond: Vec<f64> = Vec::new();
        let mut anti_states: Vec<f64> = Vec::new();
        let mut anti_actions: Vec<Vec<usize>> = vec![Vec::new(); n];

        let unpack = |packed: usize, out: &mut [usize], strides: &[usize], dims: &[usize]| {
            for a in 0..out.len() {
                out[a] = (packed / strides[a]) % dims[a];
            }
        };

        for bi in 0..b {
            for t in 0..t_max {
                if batch.mask_at(bi, t) == 0.0 {
                    continue;
                }
                let probs_t: Vec<Vec<f64>> = (0..n)
                    .map(|a| {
                        let row = bi * n + a;
                        softmax_vec(&ego_vals[t][row * n_actions..(row + 1) * n_actions])
                    })
                    .collect();

                let star_offset = star_joints.len();
                sample_packed(
                    &probs_t,
                    m,
                    &mut self.rng,
                    &strides,
                    &mut slot_of,
                    &mut star_joints,
                    None,
                )?;
                let star_len = star_joints.len() - star_offset;
                for &packed in &star_joints[star_offset..] {
                    unpack(packed as usize, &mut joint_buf, &strides, dims);
                    star_qs.extend(q_row(&alter_vals, t, bi, &joint_buf));
                    build_cond_row(&mut star_cond, batch.state_at(bi, t), Some(&joint_buf), dims);
                }

                let next = if batch.terminated_at(bi, t) {
                    None
                } else {
                    let probs_next: Vec<Vec<f64>> = (0..n)
                        .map(|a| {
                            let row = bi * n + a;
                            softmax_vec(
                                &ego_vals[t + 1][row * n_actions..(row + 1) * n_actions],
                            )
                        })
                        .collect();
                    let offset = next_joints.len();
                    sample_packed(
                        &probs_next,
                        m,
                        &mut self.rng,
                        &strides,
                        &mut slot_of,
                        &mut next_joints,
                        Some(&mut next_counts),
                    )?;
                    let len = next_joints.len() - offset;
                    for &packed in &next_joints[offset..] {
                        unpack(packed as usize, &mut joint_buf, &strides, dims);
                        next_qs.extend(q_row(&tgt_vals, t + 1, bi, &joint_buf));
                        build_cond_row(
                            &mut next_cond,
                            batch.state_at(bi, t + 1),
                            Some(&joint_buf),
                            dims,
                        );
                    }
                    Some((offset, len))
                };

                let anti = if lambda > 0.0 {
                    let anti_probs: Vec<Vec<f64>> = (0..n)
                        .map(|a| {
                            let row = bi * n + a;
                            softmin_vec(&ego_vals[t][row * n_actions..(row + 1) * n_actions])
                        })
                        .collect();
                    let offset = anti_joints.len();
                    sample_packed(
                        &anti_probs,
                        m,
                        &mut self.rng,
                        &strides,
                        &mut slot_of,
                        &mut anti_joints,
                        None,
                    )?;
                    let len = anti_joints.len() - offset;
                    for &packed in &anti_joints[offset..] {
                        unpack(packed as usize, &mut joint_buf, &strides, dims);
                        anti_states.extend_from_slice(batch.state_at(bi, t));
                        for a in 0..n {
                            anti_actions[a].push(joint_buf[a]);
                        }
                    }
                    Some((offset, len))
                } else {
                    None
                };

                cells.push(Cell { bi, t, star_offset, star_len, next, anti });
            }
        }
        let star_rows = star_joints.len();
        let next_rows = next_joints.len();
        let anti_rows = anti_joints.len();

        let eval_mixer = |mixer: &HyperMixer, qs: &[f64], cond: &[f64], rows: usize| -> Result<Vec<f64>, TensorError> {
            if rows == 0 {
                return Ok(vec![]);
            }
            let qs = Tensor::from_vec(&[rows, n], qs.to_vec())?;
            let cond = Tensor::from_vec(&[rows, mixer.cond_dim()], cond.to_vec())?;
            Ok(mixer.mix(&qs, &cond)?.to_vec())
        };
        let star_values = eval_mixer(&online_mixer, &star_qs, &star_cond, star_rows)?;
        let next_values = eval_mixer(&self.nets.target_mixer, &next_qs, &next_cond, next_rows)?;
        let anti_values = if anti_rows > 0 {
            let states = Tensor::from_vec(&[anti_rows, batch.state_dim], anti_states)?;
            let (_, _, loss) = ae_snapshot.autoencode(&states, &anti_actions)?;
            loss.to_vec()
        } else {
            vec![]
        };

        // Resolve u*, y and u^ per cell. Argmax over the first-occurrence-
        // ordered distinct list with strict improvement equals lowest-
        // sample-index tie-breaking over the raw draws.
        let mut u_star = vec![vec![0usize; rows]; t_max.max(1)];
        let mut u_hat = vec![vec![0usize; rows]; t_max.max(1)];
        let mut y = vec![0.0; b * t_max.max(1)];
        for cell in &cells {
            let star_slice = &star_values[cell.star_offset..cell.star_offset + cell.star_len];
            let best = argmax_tie_lowest(star_slice);
            unpack(
                star_joints[cell.star_offset + best] as usize,
                &mut joint_buf,
                &strides,
                dims,
            );
            for a in 0..n {
                u_star[cell.t][cell.bi * n + a] = joint_buf[a];
            }

            let r = batch.reward_at(cell.bi, cell.t);
            y[cell.bi * t_max + cell.t] = match cell.next {
                None => r,
                Some((offset, len)) => {
                    let values = &next_values[offset..offset + len];
                    let counts = &next_counts[offset..offset + len];
                    let mean: f64 = values
                        .iter()
                        .zip(counts)
                        .map(|(&v, &c)| v * c as f64)
                        .sum::<f64>()
                        / m as f64;
                    r + gamma * mean
                }
            };

            if let Some((offset, len)) = cell.anti {
                let values = &anti_values[offset..offset + len];
                let best = argmax_tie_lowest(values);
                unpack(anti_joints[offset + best] as usize, &mut joint_buf, &strides, dims);
                for a in 0..n {
                    u_hat[cell.t][cell.bi * n + a] = joint_buf[a];
                }
            }
        }

        // ---- alter-ego TD loss over executed actions ----
        let mask_total = batch.mask_sum().max(1.0);
        let mut l_alter: Option<Tensor> = None;
        let mut l_ego: Option<Tensor> = None;
        for t in 0..t_max {
            let b_t = alive[t];
            let rows_t = b_t * n;
            let gather_idx: Vec<usize> =
                (0..rows_t).map(|r| batch.action_at(r / n, t, r % n)).collect();
            let qs_t = alter_outs[t].gather_rows(&gather_idx)?.reshape(&[b_t, n])?;
            let mut cond = Vec::with_capacity(b_t * self.nets.mixer.cond_dim());
            for bi in 0..b_t {
                build_cond_row(
                    &mut cond,
                    batch.state_at(bi, t),
                    Some(batch.joint_action_at(bi, t)),
                    &batch.actions_per_agent,
                );
            }
            let cond_t = Tensor::from_vec(&[b_t, self.nets.mixer.cond_dim()], cond)?;
            let qtot_t = self.nets.mixer.mix(&qs_t, &cond_t)?;
            let y_slice: Vec<f64> = (0..b_t).map(|bi| y[bi * t_max + t]).collect();
            let mask_slice: Vec<f64> = (0..b_t).map(|bi| batch.mask_at(bi, t)).collect();
            let term = masked_td_terms(&qtot_t, &y_slice, &mask_slice)?;
            l_alter = Some(match l_alter.take() {
                None => term,
                Some(acc) => acc.add(&term)?,
            });

            // ---- ego supervision at the same timestep ----
            let row_mask = Tensor::from_vec(
                &[rows_t, 1],
                (0..rows_t).map(|r| batch.mask_at(r / n, t)).collect(),
            )?;
            let mut ego_t = ego_outs[t].cross_entropy_rows(&u_star[t][..rows_t])?;
            if lambda > 0.0 {
                ego_t =
                    ego_t.add(&ego_outs[t].cross_entropy_rows(&u_hat[t][..rows_t])?.scale(lambda))?;
            }
            let ego_term = ego_t.mul(&row_mask)?.sum();
            l_ego = Some(match l_ego.take() {
                None => ego_term,
                Some(acc) => acc.add(&ego_term)?,
            });
        }
        let l_alter = l_alter.expect("t_max >= 1").scale(1.0 / mask_total);
        let l_ego = l_ego.expect("t_max >= 1").scale(1.0 / mask_total);

        // ---- auto-encoder loss on the visited pairs ----
        let mut visit_states = Vec::new();
        let mut visit_actions: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut visit_rows = 0usize;
        for cell in &cells {
            visit_states.extend_from_slice(batch.state_at(cell.bi, cell.t));
            for a in 0..n {
                visit_actions[a].push(batch.action_at(cell.bi, cell.t, a));
            }
            visit_rows += 1;
        }
        let visit_states = Tensor::from_vec(&[visit_rows, batch.state_dim], visit_states)?;
        let (_, _, recon_rows) = self.nets.autoencoder.autoencode(&visit_states, &visit_actions)?;
        let l_recon = recon_rows.mean();

        Ok((l_alter, l_ego, l_recon))
    }

    /// Applies one update from an already-sampled batch.
    pub fn update_from_batch(
        &mut self,
        batch: &EpisodeBatch,
        progress: u64,
        buffer_size: usize,
    ) -> Result<LossReport, TrainError> {
        let lambda = self.lambda_schedule.at(progress);
        let (l_alter, l_ego, l_recon) = self.compute_losses(batch, lambda)?;

        let apply = |loss: &Tensor, params: &[Tensor], opt: &mut RmsProp, clip: f64| -> Result<(), TrainError> {
            for p in params {
                p.zero_grad();
            }
            loss.backward()?;
            clip_global_norm(params, clip);
            opt.step(params).expect("optimizer built from the same parameter list");
            Ok(())
        };
        let clip = self.cfg.grad_norm_clip;
        apply(&l_alter, &self.nets.alter_params(), &mut self.opt_alter, clip)?;
        apply(&l_ego, &self.nets.ego_params(), &mut self.opt_ego, clip)?;
        apply(&l_recon, &self.nets.autoencoder_params(), &mut self.opt_ae, clip)?;

        Ok(LossReport {
            loss_alter: l_alter.item(),
            loss_ego: l_ego.item(),
            loss_recon: l_recon.item(),
            lambda,
            buffer_size,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Environment, MatrixGameI};
    use crate::networks::NetDims;

    fn small_dims() -> NetDims {
        NetDims { embed: 8, rnn_hidden: 8, mix_hidden: 4, hyper_hidden: 4, ae_hidden: 8, ae_code: 4 }
    }

    fn matrix_spec() -> EnvSpec {
        MatrixGameI::new(0.0).env_info()
    }

    fn matrix_cfg(seed: u64) -> TrainerConfig {
        let mut cfg = TrainerConfig::preset(crate::config::Algorithm::Dave, "matrix1");
        cfg.seed = seed;
        cfg.batch_size = 4;
        cfg.sample_size = 10;
        cfg
    }

    fn uniform_buffer(count: usize) -> ReplayBuffer {
        let mut env = MatrixGameI::new(0.0);
        let spec = env.env_info();
        let mut buffer = ReplayBuffer::new(100, spec.clone());
        let joints = spec.enumerate_joint_actions();
        for i in 0..count {
            let joint = joints[i % joints.len()].clone();
            let ep = crate::envs::record_episode(&mut env, 0, |_, _, _| joint.clone()).unwrap();
            buffer.push(ep).unwrap();
        }
        buffer
    }

    #[test]
    fn degenerate_logits_sample_one_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = vec![vec![0.0, 0.0, 50.0]];
        let set = sample_joint_actions(&logits, 10, false, &mut rng).unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.actions.iter().all(|u| u == &vec![2]));
    }

    #[test]
    fn anti_sampling_flips_the_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = vec![vec![50.0, 0.0]];
        let set = sample_joint_actions(&logits, 20, true, &mut rng).unwrap();
        assert!(set.actions.iter().all(|u| u == &vec![1]));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = vec![vec![0.0; 3], vec![0.0; 3]];
        let set = sample_joint_actions(&logits, 100_000, false, &mut rng).unwrap();
        let mut counts = [0usize; 9];
        for u in &set.actions {
            counts[u[0] * 3 + u[1]] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 1.0 / 9.0).abs() < 0.005, "joint {i}: freq {freq}");
        }
    }

    #[test]
    fn zero_sample_size_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_joint_actions(&[vec![0.0]], 0, false, &mut rng),
            Err(TrainError::EmptySampleSet)
        ));
    }

    #[test]
    fn select_best_single_sample_and_payoff_oracle() {
        let single = JointActionSet { actions: vec![vec![1, 2]], anti: false };
        let (u, _) = select_best_joint_action(&single, |_| 0.0);
        assert_eq!(u, vec![1, 2]);

        let env = MatrixGameI::new(0.0);
        let set = JointActionSet {
            actions: vec![vec![1, 1], vec![0, 0], vec![2, 1], vec![0, 0]],
            anti: false,
        };
        let (u, v) = select_best_joint_action(&set, |u| env.payoff(u[0], u[1]));
        assert_eq!(u, vec![0, 0]);
        assert_eq!(v, 8.0);
        // argmax contract: best value dominates every member
        for member in &set.actions {
            assert!(v >= env.payoff(member[0], member[1]));
        }
    }

    #[test]
    fn select_best_ties_break_to_lowest_sample_index() {
        let set = JointActionSet {
            actions: vec![vec![2, 2], vec![1, 1], vec![0, 0]],
            anti: false,
        };
        let (u, _) = select_best_joint_action(&set, |_| 1.0);
        assert_eq!(u, vec![2, 2]);
    }

    #[test]
    fn p_optimal_examples_and_monotonicity() {
        assert_eq!(p_optimal(0.5, 1).unwrap(), 0.5);
        assert!((p_optimal(0.5, 2).unwrap() - 0.75).abs() < 1e-15);
        let p = p_optimal(1.0 / 9.0, 100).unwrap();
        let expected = 1.0 - (8.0f64 / 9.0).powi(100);
        assert!((p - expected).abs() < 1e-12);
        assert!(p > 0.99999 && p < 0.999993);

        for &p in &[0.01, 0.1, 0.5, 0.9] {
            let mut prev = 0.0;
            for m in 1..=50 {
                let v = p_optimal(p, m).unwrap();
                assert!(v >= prev);
                // Strict until the closed form saturates at 1 in f64.
                if (1.0 - p).powi(m as i32) > 1e-12 {
                    assert!(v > prev, "p_optimal must be strictly increasing in M");
                }
                prev = v;
            }
        }
        assert!(p_optimal(0.0, 3).is_err());
        assert!(p_optimal(1.0, 3).is_err());
    }

    #[test]
    fn ego_loss_uniform_closed_form_and_term_merge() {
        let logits: Vec<Tensor> = (0..2)
            .map(|_| Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap())
            .collect();
        let u_star = vec![vec![0usize], vec![2usize]];
        let loss = ego_loss_rows(&logits, &u_star, None, 0.0).unwrap();
        assert!((loss.item() - 2.0 * 3.0f64.ln()).abs() < 1e-12);

        // lambda=1 with identical targets doubles the loss
        let doubled = ego_loss_rows(&logits, &u_star, Some(&u_star), 1.0).unwrap();
        assert!((doubled.item() - 4.0 * 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn novel_action_prefers_untrained_pair() {
        use crate::autodiff::RmsProp;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ae = AutoEncoder::init(1, &[3, 3], 16, 8, &mut rng);
        let params = ae.parameters();
        let mut opt = RmsProp::new(&params, 0.002, 0.99, 1e-5);
        let state = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        for _ in 0..500 {
            let (_, _, loss) = ae.autoencode(&state, &[vec![1], vec![1]]).unwrap();
            let loss = loss.mean();
            for p in &params {
                p.zero_grad();
            }
            loss.backward().unwrap();
            opt.step(&params).unwrap();
        }
        let trained = ae.autoencode(&state, &[vec![1], vec![1]]).unwrap().2.item();
        let novel = ae.autoencode(&state, &[vec![0], vec![2]]).unwrap().2.item();
        assert!(novel > trained, "novel {novel} should exceed trained {trained}");

        let set = JointActionSet { actions: vec![vec![1, 1], vec![0, 2]], anti: true };
        let (u, best) = select_novel_action(&[1.0], &set, &ae).unwrap();
        assert_eq!(u, vec![0, 2]);
        assert!(best >= trained);
    }

    #[test]
    fn novel_action_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ae = AutoEncoder::init(1, &[3, 3], 8, 4, &mut rng);
        let set = JointActionSet { actions: vec![vec![2, 0]], anti: true };
        let (u, _) = select_novel_action(&[1.0], &set, &ae).unwrap();
        assert_eq!(u, vec![2, 0]);
    }

    #[test]
    fn act_degenerate_uniform_and_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(act(&[vec![0.0, 80.0, 0.0]], &mut rng), vec![1]);

        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[act(&[vec![0.0; 3]], &mut rng)[0]] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / 100_000.0 - 1.0 / 3.0).abs() < 0.005);
        }

        assert_eq!(act_greedy(&[vec![1.0, 3.0, 3.0], vec![0.5, 0.1, 0.4]]), vec![1, 0]);
    }

    #[test]
    fn sample_mean_zero_variance_and_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Degenerate policy: the estimate equals qtot at that joint action.
        let logits = vec![vec![60.0, 0.0], vec![0.0, 60.0]];
        let v = sample_mean_qtot(&logits, 10, &mut rng, |u| (u[0] * 2 + u[1]) as f64).unwrap();
        assert_eq!(v, 1.0); // joint (0,1)

        // Exact enumeration vs Monte-Carlo within 1% on a table whose mean
        // is well away from zero (so relative error is meaningful).
        let logits = vec![vec![0.3, -0.2, 0.5], vec![-0.1, 0.4, 0.0]];
        let table = |u: &[usize]| 10.0 + ((u[0] * 3 + u[1]) as f64).sin() * 2.0;
        let exact = exact_expected_qtot(&logits, table);
        let mc = sample_mean_qtot(&logits, 10_000, &mut rng, table).unwrap();
        assert!((mc - exact).abs() / exact.abs().max(1.0) < 0.01, "mc {mc} vs exact {exact}");
    }

    #[test]
    fn masked_td_terms_examples() {
        let qtot = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        assert_eq!(masked_td_terms(&qtot, &[3.0], &[1.0]).unwrap().item(), 4.0);
        assert_eq!(masked_td_terms(&qtot, &[1.0], &[1.0]).unwrap().item(), 0.0);

        // appending masked rows changes nothing
        let qtot = Tensor::from_vec(&[3, 1], vec![1.0, 9.0, -4.0]).unwrap();
        let v = masked_td_terms(&qtot, &[3.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap().item();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn train_step_is_deterministic_given_seed() {
        let buffer = uniform_buffer(9);
        let spec = matrix_spec();
        let cfg = matrix_cfg(5);
        let mut t1 = DaveTrainer::new(&spec, &cfg, small_dims());
        let mut t2 = DaveTrainer::new(&spec, &cfg, small_dims());
        for step in 0..3 {
            let r1 = t1.train_step(&buffer, step).unwrap();
            let r2 = t2.train_step(&buffer, step).unwrap();
            assert_eq!(r1, r2, "bit-identical loss reports expected");
        }
    }

    #[test]
    fn updates_touch_only_their_own_parameters() {
        let buffer = uniform_buffer(9);
        let spec = matrix_spec();
        let cfg = matrix_cfg(6);
        let mut trainer = DaveTrainer::new(&spec, &cfg, small_dims());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buffer.sample(4, &mut rng).unwrap();
        let (l_alter, l_ego, l_recon) = trainer.compute_losses(&batch, 0.5).unwrap();

        let all = |params: &[Tensor]| -> Vec<Option<Vec<f64>>> {
            params.iter().map(|p| p.grad()).collect()
        };
        l_alter.backward().unwrap();
        assert!(all(&trainer.nets.ego_params()).iter().all(|g| g.is_none()));
        assert!(all(&trainer.nets.autoencoder_params()).iter().all(|g| g.is_none()));
        assert!(all(&trainer.nets.alter_params()).iter().any(|g| g.is_some()));

        for p in trainer.nets.alter_params() {
            p.zero_grad();
        }
        l_ego.backward().unwrap();
        assert!(all(&trainer.nets.alter_params()).iter().all(|g| g.is_none()));
        assert!(all(&trainer.nets.ego_params()).iter().any(|g| g.is_some()));

        for p in trainer.nets.ego_params() {
            p.zero_grad();
        }
        l_recon.backward().unwrap();
        assert!(all(&trainer.nets.alter_params()).iter().all(|g| g.is_none()));
        assert!(all(&trainer.nets.ego_params()).iter().all(|g| g.is_none()));
        assert!(all(&trainer.nets.autoencoder_params()).iter().any(|g| g.is_some()));
    }

    #[test]
    fn padding_steps_contribute_nothing_to_any_loss() {
        let spec = matrix_spec();
        let cfg = matrix_cfg(7);
        let buffer = uniform_buffer(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buffer.sample(4, &mut rng).unwrap();

        // Hand-pad the same batch with three empty timesteps.
        let mut padded = batch.clone();
        let (b, n, sd, od) = (batch.n_episodes, batch.n_agents, batch.state_dim, batch.obs_dim);
        let t_new = batch.t_max + 3;
        padded.t_max = t_new;
        padded.states = vec![0.0; b * (t_new + 1) * sd];
        padded.obs = vec![0.0; b * (t_new + 1) * n * od];
        padded.actions = vec![0; b * t_new * n];
        padded.rewards = vec![0.0; b * t_new];
        padded.terminated = vec![0.0; b * t_new];
        padded.mask = vec![0.0; b * t_new];
        for bi in 0..b {
            for t in 0..=batch.t_max {
                let src = (bi * (batch.t_max + 1) + t) * sd;
                let dst = (bi * (t_new + 1) + t) * sd;
                padded.states[dst..dst + sd].copy_from_slice(&batch.states[src..src + sd]);
                for a in 0..n {
                    let src = ((bi * (batch.t_max + 1) + t) * n + a) * od;
                    let dst = ((bi * (t_new + 1) + t) * n + a) * od;
                    padded.obs[dst..dst + od].copy_from_slice(&batch.obs[src..src + od]);
                }
            }
            for t in 0..batch.t_max {
                for a in 0..n {
                    padded.actions[(bi * t_new + t) * n + a] = batch.action_at(bi, t, a);
                }
                padded.rewards[bi * t_new + t] = batch.reward_at(bi, t);
                padded.terminated[bi * t_new + t] =
                    if batch.terminated_at(bi, t) { 1.0 } else { 0.0 };
                padded.mask[bi * t_new + t] = batch.mask_at(bi, t);
            }
        }

        let mut t1 = DaveTrainer::new(&spec, &cfg, small_dims());
        let mut t2 = DaveTrainer::new(&spec, &cfg, small_dims());
        let r1 = t1.update_from_batch(&batch, 0, 9).unwrap();
        let r2 = t2.update_from_batch(&padded, 0, 9).unwrap();
        assert_eq!(r1, r2, "padding must contribute exactly zero to every loss");
    }

    #[test]
    fn target_networks_change_only_at_sync_points() {
        let spec = matrix_spec();
        let mut cfg = matrix_cfg(8);
        cfg.target_update_episodes = 3;
        let buffer = uniform_buffer(9);
        let mut trainer = DaveTrainer::new(&spec, &cfg, small_dims());
        let tgt_before: Vec<Vec<f64>> =
            trainer.nets.target_alter.parameters().iter().map(|p| p.to_vec()).collect();
        trainer.train_step(&buffer, 0).unwrap();
        trainer.train_step(&buffer, 1).unwrap();
        let tgt_mid: Vec<Vec<f64>> =
            trainer.nets.target_alter.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(tgt_before, tgt_mid, "targets must be frozen between syncs");
        trainer.train_step(&buffer, 2).unwrap();
        let tgt_after: Vec<Vec<f64>> =
            trainer.nets.target_alter.parameters().iter().map(|p| p.to_vec()).collect();
        assert_ne!(tgt_before, tgt_after, "third step hits the sync point");
        for (online, target) in
            trainer.nets.alter.parameters().iter().zip(trainer.nets.target_alter.parameters())
        {
            assert_eq!(online.to_vec(), target.to_vec());
        }
    }
}
