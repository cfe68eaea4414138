//! Experiment runner: uniform-visitation data collection, the online
//! rollout/training loop, periodic greedy evaluation, and metrics/
//! checkpoint persistence. The whole pipeline is a pure function of
//! (config, seed); metrics files reproduce byte-for-byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{BaselineActor, BaselineTrainer};
use crate::config::{Algorithm, ConfigError, TrainerConfig};
use crate::dave::{act, act_greedy, DaveTrainer, EgoActor, TrainError};
use crate::envs::{make_env, record_episode, Environment, Episode};
use crate::networks::checkpoint::{self, CheckpointError};
use crate::networks::{MixerKind, NetDims};
use crate::replay::{ReplayBuffer, ReplayError};

#[derive(Debug)]
pub enum HarnessError {
    Config(ConfigError),
    UnknownEnv(String),
    /// Uniform visitation needs a single-state matrix environment.
    NotUniformCapable(String),
    Train(TrainError),
    Replay(ReplayError),
    Io(std::io::Error),
    Checkpoint(CheckpointError),
    Env(crate::envs::EnvError),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(e) => write!(f, "{e}"),
            HarnessError::UnknownEnv(e) => write!(f, "{e}"),
            HarnessError::NotUniformCapable(env) => {
                write!(f, "uniform visitation requires a single-step matrix game, got '{env}'")
            }
            HarnessError::Train(e) => write!(f, "{e}"),
            HarnessError::Replay(e) => write!(f, "{e}"),
            HarnessError::Io(e) => write!(f, "{e}"),
            HarnessError::Checkpoint(e) => write!(f, "{e}"),
            HarnessError::Env(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e)
    }
}
impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        HarnessError::Train(e)
    }
}
impl From<ReplayError> for HarnessError {
    fn from(e: ReplayError) -> Self {
        HarnessError::Replay(e)
    }
}
impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}
impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        HarnessError::Checkpoint(e)
    }
}
impl From<crate::envs::EnvError> for HarnessError {
    fn from(e: crate::envs::EnvError) -> Self {
        HarnessError::Env(e)
    }
}

/// One metrics record, written at every evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Annealing clock: environment steps online, update count offline.
    pub step: u64,
    pub episodes: u64,
    pub loss_alter: Option<f64>,
    pub loss_ego: Option<f64>,
    pub loss_recon: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub eval_return: f64,
    pub eval_optimal: bool,
}

pub const METRICS_HEADER: &str =
    "step,episodes,loss_alter,loss_ego,loss_recon,lambda,epsilon,eval_return,eval_optimal";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{}",
            self.step,
            self.episodes,
            fmt_opt(self.loss_alter),
            fmt_opt(self.loss_ego),
            fmt_opt(self.loss_recon),
            fmt_opt(self.lambda),
            fmt_opt(self.epsilon),
            self.eval_return,
            if self.eval_optimal { 1 } else { 0 }
        )
    }
}

/// Result of one full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub final_return: f64,
    pub final_optimal: bool,
    pub env_steps: u64,
    pub episodes: u64,
    pub rows: Vec<MetricsRow>,
}

/// Uniformly enumerated one-step episodes for the matrix games: complete
/// round-robin passes over the joint action space, each pass shuffled, so
/// visit counts differ by at most one across joint actions.
pub fn collect_uniform(
    env: &mut dyn Environment,
    budget: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>, HarnessError> {
    let spec = env.env_info();
    if spec.episode_limit != 1 {
        return Err(HarnessError::NotUniformCapable(format!(
            "episode_limit {} != 1",
            spec.episode_limit
        )));
    }
    let joints = spec.enumerate_joint_actions();
    let mut episodes = Vec::with_capacity(budget as usize);
    while episodes.len() < budget as usize {
        let mut round = joints.clone();
        round.shuffle(rng);
        for joint in round {
            if episodes.len() == budget as usize {
                break;
            }
            let ep = record_episode(env, episodes.len() as u64, |_, _, _| joint.clone())?;
            episodes.push(ep);
        }
    }
    Ok(episodes)
}

pub enum AnyTrainer {
    Dave(DaveTrainer),
    Baseline(BaselineTrainer),
}

pub enum AnyActor {
    Dave(EgoActor),
    Baseline(BaselineActor),
}

impl AnyTrainer {
    pub fn new(cfg: &TrainerConfig, spec: &crate::envs::EnvSpec) -> AnyTrainer {
        match cfg.algorithm {
            Algorithm::Dave => AnyTrainer::Dave(DaveTrainer::new(spec, cfg, NetDims::default())),
            Algorithm::Qmix => AnyTrainer::Baseline(BaselineTrainer::new(
                spec,
                cfg,
                MixerKind::Monotonic,
                NetDims::default(),
            )),
            Algorithm::Vdn => AnyTrainer::Baseline(BaselineTrainer::new(
                spec,
                cfg,
                MixerKind::Additive,
                NetDims::default(),
            )),
            Algorithm::IgmfreeQmix => AnyTrainer::Baseline(BaselineTrainer::new(
                spec,
                cfg,
                MixerKind::IgmfreeNaive,
                NetDims::default(),
            )),
        }
    }

    pub fn actor(&self) -> AnyActor {
        match self {
            AnyTrainer::Dave(t) => AnyActor::Dave(t.actor()),
            AnyTrainer::Baseline(t) => AnyActor::Baseline(t.actor()),
        }
    }

    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        progress: u64,
    ) -> Result<(Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<f64>), TrainError>
    {
        match self {
            AnyTrainer::Dave(t) => {
                let r = t.train_step(buffer, progress)?;
                Ok((Some(r.loss_alter), Some(r.loss_ego), Some(r.loss_recon), Some(r.lambda), None))
            }
            AnyTrainer::Baseline(t) => {
                let r = t.train_step(buffer, progress)?;
                Ok((Some(r.loss_td), None, None, None, Some(r.epsilon)))
            }
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, crate::autodiff::Tensor)> {
        match self {
            AnyTrainer::Dave(t) => t.nets.named_parameters(),
            AnyTrainer::Baseline(t) => t.nets.named_parameters(),
        }
    }
}

/// Greedy policy evaluation: DAVE takes the argmax of the ego logits,
/// baselines act with epsilon = 0. No training side effects; the actor is
/// a detached snapshot.
pub fn evaluate(
    actor: &mut AnyActor,
    env: &mut dyn Environment,
    episodes: usize,
) -> Result<(f64, bool), HarnessError> {
    let mut total = 0.0;
    for i in 0..episodes {
        let ep = match actor {
            AnyActor::Dave(a) => {
                a.reset();
                record_episode(env, i as u64, |_, obs, prev| act_greedy(&a.logits(obs, prev)))?
            }
            AnyActor::Baseline(a) => {
                a.reset();
                record_episode(env, i as u64, |_, obs, prev| act_greedy(&a.q_values(obs, prev)))?
            }
        };
        total += ep.total_reward();
    }
    let mean = total / episodes as f64;
    Ok((mean, mean >= env.optimal_return() - 1e-9))
}

/// Executes one full training run and writes `config.txt`,
/// `seed<N>.csv` and `checkpoint.bin` into the output directory.
pub fn run(cfg: &TrainerConfig) -> Result<RunSummary, HarnessError> {
    let mut env = make_env(&cfg.env, cfg.k).map_err(HarnessError::UnknownEnv)?;
    let spec = env.env_info();
    let mut trainer = AnyTrainer::new(cfg, &spec);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, spec.clone());
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_3333);

    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.txt"), cfg.snapshot())?;

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut episodes: u64 = 0;
    let mut env_steps: u64 = 0;
    let mut last_losses = (None, None, None, None, None);

    let mut eval_env = make_env(&cfg.env, cfg.k).map_err(HarnessError::UnknownEnv)?;
    let mut push_eval_row =
        |trainer: &AnyTrainer,
         step: u64,
         episodes: u64,
         losses: &(Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<f64>),
         rows: &mut Vec<MetricsRow>|
         -> Result<(), HarnessError> {
            let mut actor = trainer.actor();
            let (eval_return, eval_optimal) =
                evaluate(&mut actor, eval_env.as_mut(), cfg.eval_episodes)?;
            rows.push(MetricsRow {
                step,
                episodes,
                loss_alter: losses.0,
                loss_ego: losses.1,
                loss_recon: losses.2,
                lambda: losses.3,
                epsilon: losses.4,
                eval_return,
                eval_optimal,
            });
            Ok(())
        };

    if cfg.uniform_visitation {
        // Offline protocol: the full interaction budget is collected up
        // front under uniform visitation, then `updates` training steps run
        // on the fixed dataset. The annealing/evaluation clock is the
        // update counter.
        for ep in collect_uniform(env.as_mut(), cfg.budget, &mut rollout_rng)? {
            env_steps += ep.len() as u64;
            episodes += 1;
            buffer.push(ep)?;
        }
        for update in 0..cfg.updates {
            last_losses = trainer.train_step(&buffer, update)?;
            if (update + 1) % cfg.eval_interval == 0 {
                push_eval_row(&trainer, update + 1, episodes, &last_losses, &mut rows)?;
            }
        }
        if rows.is_empty() {
            push_eval_row(&trainer, 0, episodes, &last_losses, &mut rows)?;
        }
    } else {
        // Online protocol: alternate one rollout episode with one update.
        let mut next_eval = cfg.eval_interval;
        while env_steps < cfg.budget {
            let ep = {
                let mut actor = trainer.actor();
                match &mut actor {
                    AnyActor::Dave(a) => {
                        a.reset();
                        record_episode(env.as_mut(), episodes, |_, obs, prev| {
                            act(&a.logits(obs, prev), &mut rollout_rng)
                        })?
                    }
                    AnyActor::Baseline(a) => {
                        a.reset();
                        let epsilon = match &trainer {
                            AnyTrainer::Baseline(t) => t.epsilon_at(env_steps),
                            AnyTrainer::Dave(_) => unreachable!(),
                        };
                        record_episode(env.as_mut(), episodes, |_, obs, prev| {
                            a.act(obs, prev, epsilon, &mut rollout_rng)
                        })?
                    }
                }
            };
            env_steps += ep.len() as u64;
            episodes += 1;
            buffer.push(ep)?;
            if buffer.len() >= cfg.batch_size {
                last_losses = trainer.train_step(&buffer, env_steps)?;
            }
            while env_steps >= next_eval {
                push_eval_row(&trainer, next_eval, episodes, &last_losses, &mut rows)?;
                next_eval += cfg.eval_interval;
            }
        }
        if rows.is_empty() {
            push_eval_row(&trainer, env_steps, episodes, &last_losses, &mut rows)?;
        }
    }

    // Persist metrics and checkpoint.
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(out_dir.join(format!("seed{}.csv", cfg.seed)), csv)?;

    let mut entries = trainer.named_parameters();
    entries.push((
        "meta.algorithm_id".to_string(),
        crate::autodiff::Tensor::scalar(match cfg.algorithm {
            Algorithm::Dave => 0.0,
            Algorithm::Qmix => 1.0,
            Algorithm::Vdn => 2.0,
            Algorithm::IgmfreeQmix => 3.0,
        }),
    ));
    entries.push(("meta.k".to_string(), crate::autodiff::Tensor::scalar(cfg.k)));
    entries.push(("meta.seed".to_string(), crate::autodiff::Tensor::scalar(cfg.seed as f64)));
    checkpoint::save(&out_dir.join("checkpoint.bin"), &entries)?;

    let last = rows.last().expect("at least one evaluation row");
    Ok(RunSummary {
        out_dir,
        final_return: last.eval_return,
        final_optimal: last.eval_optimal,
        env_steps,
        episodes,
        rows,
    })
}

/// Loads a checkpoint and evaluates it greedily on a named environment.
pub fn eval_checkpoint(
    ckpt_path: &Path,
    env_name: &str,
    episodes: usize,
) -> Result<(f64, bool), HarnessError> {
    let entries = checkpoint::load(ckpt_path)?;
    let k = checkpoint::find_scalar(&entries, "meta.k").unwrap_or(0.0);
    let algorithm = match checkpoint::find_scalar(&entries, "meta.algorithm_id") {
        Some(id) if id == 0.0 => Algorithm::Dave,
        Some(id) if id == 1.0 => Algorithm::Qmix,
        Some(id) if id == 2.0 => Algorithm::Vdn,
        Some(id) if id == 3.0 => Algorithm::IgmfreeQmix,
        _ => {
            return Err(HarnessError::Checkpoint(CheckpointError::Format(
                "missing or unknown meta.algorithm_id".into(),
            )))
        }
    };
    let mut env = make_env(env_name, k).map_err(HarnessError::UnknownEnv)?;
    let spec = env.env_info();
    let mut cfg = TrainerConfig::preset(algorithm, env_name);
    cfg.k = k;
    let trainer = AnyTrainer::new(&cfg, &spec);
    match &trainer {
        AnyTrainer::Dave(t) => t.nets.load_named(&entries).map_err(|e| {
            HarnessError::Checkpoint(CheckpointError::Format(e))
        })?,
        AnyTrainer::Baseline(t) => t.nets.load_named(&entries).map_err(|e| {
            HarnessError::Checkpoint(CheckpointError::Format(e))
        })?,
    }
    let mut actor = trainer.actor();
    evaluate(&mut actor, env.as_mut(), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{MatrixGameI, MultiStepMatrixGame};

    #[test]
    fn uniform_collection_counts_differ_by_at_most_one() {
        let mut env = MatrixGameI::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps = collect_uniform(&mut env, 9, &mut rng).unwrap();
        let mut counts = [0usize; 9];
        for ep in &eps {
            counts[ep.actions[0][0] * 3 + ep.actions[0][1]] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1), "budget 9 must cover each joint action once");

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = collect_uniform(&mut env, 400, &mut rng).unwrap();
        let mut counts = [0usize; 9];
        for ep in &eps {
            counts[ep.actions[0][0] * 3 + ep.actions[0][1]] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 400);
        assert!(counts.iter().all(|&c| c == 44 || c == 45), "counts {counts:?}");

        // rewards equal payoff lookups
        let env_check = MatrixGameI::new(0.0);
        for ep in &eps {
            assert_eq!(ep.rewards[0], env_check.payoff(ep.actions[0][0], ep.actions[0][1]));
        }
    }

    #[test]
    fn uniform_collection_rejects_multistep() {
        let mut env = MultiStepMatrixGame::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            collect_uniform(&mut env, 10, &mut rng),
            Err(HarnessError::NotUniformCapable(_))
        ));
    }

    #[test]
    fn oracle_policy_on_multistep_returns_13() {
        let mut env = MultiStepMatrixGame::new();
        let mut actor_step = 0usize;
        let ep = record_episode(&mut env, 0, |t, _, _| {
            actor_step = t;
            if t < 8 {
                vec![0, 0]
            } else {
                vec![1, 1]
            }
        })
        .unwrap();
        assert_eq!(ep.total_reward(), 13.0);
        assert_eq!(ep.len(), 9);
    }

    #[test]
    fn evaluation_has_no_training_side_effects() {
        let cfg = TrainerConfig::preset(Algorithm::Dave, "matrix1");
        let spec = MatrixGameI::new(0.0).env_info();
        let trainer = AnyTrainer::new(&cfg, &spec);
        let before: Vec<Vec<f64>> = trainer
            .named_parameters()
            .iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        let mut env = MatrixGameI::new(0.0);
        let mut actor = trainer.actor();
        evaluate(&mut actor, &mut env, 4).unwrap();
        let after: Vec<Vec<f64>> = trainer
            .named_parameters()
            .iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        assert_eq!(before, after);
    }
}
