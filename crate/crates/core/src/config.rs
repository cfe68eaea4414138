//! Experiment configuration: flat `key = value` text files with hard
//! errors on unknown keys, env-specific presets, and a canonical snapshot
//! serialization.

use std::fmt;

/// Training algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dave,
    Qmix,
    Vdn,
    IgmfreeQmix,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] =
        [Algorithm::Dave, Algorithm::Qmix, Algorithm::Vdn, Algorithm::IgmfreeQmix];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Dave => "dave",
            Algorithm::Qmix => "qmix",
            Algorithm::Vdn => "vdn",
            Algorithm::IgmfreeQmix => "igmfree-qmix",
        }
    }

    pub fn parse(s: &str) -> Result<Algorithm, ConfigError> {
        Algorithm::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| ConfigError::BadValue {
                key: "algorithm".into(),
                value: s.into(),
                expected: "one of: dave, qmix, vdn, igmfree-qmix".into(),
            })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Key not in the schema; lists the valid keys so typos surface fast.
    UnknownKey { key: String },
    BadValue { key: String, value: String, expected: String },
    MissingKey { key: String },
    /// A line without `key = value` shape.
    BadLine { line_no: usize, line: String },
    /// A semantic invariant failed after all keys were applied.
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { key } => {
                write!(f, "unknown config key '{key}'; valid keys: {}", KEYS.join(", "))
            }
            ConfigError::BadValue { key, value, expected } => {
                write!(f, "bad value '{value}' for key '{key}' (expected {expected})")
            }
            ConfigError::MissingKey { key } => write!(f, "missing required config key '{key}'"),
            ConfigError::BadLine { line_no, line } => {
                write!(f, "line {line_no}: expected 'key = value', got '{line}'")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

const KEYS: [&str; 25] = [
    "algorithm",
    "env",
    "k",
    "seed",
    "budget",
    "learning_rate",
    "rmsprop_alpha",
    "rmsprop_eps",
    "target_update_episodes",
    "grad_norm_clip",
    "batch_size",
    "buffer_capacity",
    "gamma",
    "sample_size",
    "lambda_init",
    "lambda_end",
    "lambda_anneal_steps",
    "epsilon_start",
    "epsilon_end",
    "epsilon_anneal_steps",
    "uniform_visitation",
    "updates",
    "eval_interval",
    "eval_episodes",
    "out_dir",
];

/// Every knob of a training run. Optimizer and annealing defaults follow
/// the standard recurrent value-decomposition setup; protocol fields
/// (budget, batch size, evaluation cadence, uniform visitation) are preset
/// per environment by [`TrainerConfig::preset`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub env: String,
    pub k: f64,
    pub seed: u64,
    /// Total environment interactions permitted.
    pub budget: u64,
    pub learning_rate: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub target_update_episodes: u64,
    pub grad_norm_clip: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    /// Sample size M of the ego/anti-ego joint-action sets.
    pub sample_size: usize,
    pub lambda_init: f64,
    pub lambda_end: f64,
    /// Annealing period for lambda, in environment steps.
    pub lambda_anneal_steps: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    /// When set, the whole interaction budget is collected up front with
    /// uniformly enumerated joint actions and training runs offline on the
    /// fixed dataset.
    pub uniform_visitation: bool,
    /// Offline update count under uniform visitation (ignored otherwise;
    /// online runs do one update per collected episode).
    pub updates: u64,
    /// Evaluation cadence: environment steps online, updates offline.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub out_dir: String,
}

impl TrainerConfig {
    /// Environment-specific defaults. Matrix games use the didactic
    /// 400-interaction uniform-visitation protocol with a smaller batch;
    /// the multi-step game trains online with the full exploration setup.
    pub fn preset(algorithm: Algorithm, env: &str) -> TrainerConfig {
        let mut cfg = TrainerConfig {
            algorithm,
            env: env.to_string(),
            k: 0.0,
            seed: 0,
            budget: 50_000,
            learning_rate: 0.0005,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 0.00001,
            target_update_episodes: 200,
            grad_norm_clip: 10.0,
            batch_size: 32,
            buffer_capacity: 5000,
            gamma: 0.99,
            sample_size: 100,
            lambda_init: 0.5,
            lambda_end: 0.0,
            lambda_anneal_steps: 25_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            uniform_visitation: false,
            updates: 0,
            eval_interval: 2000,
            eval_episodes: 32,
            out_dir: "runs".to_string(),
        };
        if env.starts_with("matrix") {
            cfg.budget = 400;
            cfg.batch_size = 16;
            cfg.uniform_visitation = true;
            cfg.updates = 2000;
            cfg.eval_interval = 100;
            // Under uniform visitation the data is given, so anti-ego
            // exploration has nothing to discover.
            cfg.lambda_init = 0.0;
            cfg.lambda_anneal_steps = 1000;
        }
        cfg
    }

    /// Parses `key = value` text. Lines may be blank or `#` comments.
    /// `algorithm` and `env` are mandatory; everything else falls back to
    /// the env preset.
    pub fn from_text(text: &str) -> Result<TrainerConfig, ConfigError> {
        let pairs = parse_pairs(text)?;
        TrainerConfig::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<TrainerConfig, ConfigError> {
        let find = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let algorithm = Algorithm::parse(
            &find("algorithm").ok_or(ConfigError::MissingKey { key: "algorithm".into() })?,
        )?;
        let env = find("env").ok_or(ConfigError::MissingKey { key: "env".into() })?;
        let mut cfg = TrainerConfig::preset(algorithm, &env);
        for (key, value) in pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                expected: expected.into(),
            })
        }
        match key {
            "algorithm" => self.algorithm = Algorithm::parse(value)?,
            "env" => self.env = value.to_string(),
            "k" => self.k = num(key, value, "a number")?,
            "seed" => self.seed = num(key, value, "an unsigned integer")?,
            "budget" => self.budget = num(key, value, "an unsigned integer")?,
            "learning_rate" => self.learning_rate = num(key, value, "a number")?,
            "rmsprop_alpha" => self.rmsprop_alpha = num(key, value, "a number")?,
            "rmsprop_eps" => self.rmsprop_eps = num(key, value, "a number")?,
            "target_update_episodes" => {
                self.target_update_episodes = num(key, value, "an unsigned integer")?
            }
            "grad_norm_clip" => self.grad_norm_clip = num(key, value, "a number")?,
            "batch_size" => self.batch_size = num(key, value, "an unsigned integer")?,
            "buffer_capacity" => self.buffer_capacity = num(key, value, "an unsigned integer")?,
            "gamma" => self.gamma = num(key, value, "a number")?,
            "sample_size" => self.sample_size = num(key, value, "an unsigned integer")?,
            "lambda_init" => self.lambda_init = num(key, value, "a number")?,
            "lambda_end" => self.lambda_end = num(key, value, "a number")?,
            "lambda_anneal_steps" => {
                self.lambda_anneal_steps = num(key, value, "an unsigned integer")?
            }
            "epsilon_start" => self.epsilon_start = num(key, value, "a number")?,
            "epsilon_end" => self.epsilon_end = num(key, value, "a number")?,
            "epsilon_anneal_steps" => {
                self.epsilon_anneal_steps = num(key, value, "an unsigned integer")?
            }
            "uniform_visitation" => {
                self.uniform_visitation = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            expected: "true or false".into(),
                        })
                    }
                }
            }
            "updates" => self.updates = num(key, value, "an unsigned integer")?,
            "eval_interval" => self.eval_interval = num(key, value, "an unsigned integer")?,
            "eval_episodes" => self.eval_episodes = num(key, value, "an unsigned integer")?,
            "out_dir" => self.out_dir = value.to_string(),
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_size < 1 {
            return Err(ConfigError::Invalid("sample_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_end)
            || !(0.0..=1.0).contains(&self.lambda_init)
            || self.lambda_end > self.lambda_init
        {
            return Err(ConfigError::Invalid(format!(
                "need 0 <= lambda_end <= lambda_init <= 1, got init {} end {}",
                self.lambda_init, self.lambda_end
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid(format!("gamma must be in [0,1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(ConfigError::Invalid(format!(
                "need batch_size >= 1 and buffer_capacity >= batch_size, got {} and {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if self.eval_interval == 0 {
            return Err(ConfigError::Invalid("eval_interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical serialization: every key in schema order, reparseable.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "algorithm" => self.algorithm.as_str().to_string(),
                "env" => self.env.clone(),
                "k" => self.k.to_string(),
                "seed" => self.seed.to_string(),
                "budget" => self.budget.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "rmsprop_alpha" => self.rmsprop_alpha.to_string(),
                "rmsprop_eps" => self.rmsprop_eps.to_string(),
                "target_update_episodes" => self.target_update_episodes.to_string(),
                "grad_norm_clip" => self.grad_norm_clip.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "buffer_capacity" => self.buffer_capacity.to_string(),
                "gamma" => self.gamma.to_string(),
                "sample_size" => self.sample_size.to_string(),
                "lambda_init" => self.lambda_init.to_string(),
                "lambda_end" => self.lambda_end.to_string(),
                "lambda_anneal_steps" => self.lambda_anneal_steps.to_string(),
                "epsilon_start" => self.epsilon_start.to_string(),
                "epsilon_end" => self.epsilon_end.to_string(),
                "epsilon_anneal_steps" => self.epsilon_anneal_steps.to_string(),
                "uniform_visitation" => self.uniform_visitation.to_string(),
                "updates" => self.updates.to_string(),
                "eval_interval" => self.eval_interval.to_string(),
                "eval_episodes" => self.eval_episodes.to_string(),
                "out_dir" => self.out_dir.clone(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::BadLine { line_no: i + 1, line: line.to_string() })?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key });
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a `key=value` CLI override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (key, value) =
        s.split_once('=').ok_or(ConfigError::BadLine { line_no: 0, line: s.to_string() })?;
    let key = key.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(ConfigError::UnknownKey { key });
    }
    Ok((key, value.trim().to_string()))
}
