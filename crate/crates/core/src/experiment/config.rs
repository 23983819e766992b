use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::es::EsConfig;
use crate::features::{ContinualConfig, ExtractorDims, FeatureKind, TrainConfig};
use crate::seed;

/// One of the nine experimental conditions: an extractor kind, optionally
/// with continual extractor training (written with a trailing `*`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Condition {
    pub kind: FeatureKind,
    pub continual: bool,
}

impl Condition {
    pub const ALL: [Condition; 9] = [
        Condition { kind: FeatureKind::None, continual: false },
        Condition { kind: FeatureKind::Ae, continual: false },
        Condition { kind: FeatureKind::Ae, continual: true },
        Condition { kind: FeatureKind::AeFm, continual: false },
        Condition { kind: FeatureKind::AeFm, continual: true },
        Condition { kind: FeatureKind::Sts, continual: false },
        Condition { kind: FeatureKind::Sts, continual: true },
        Condition { kind: FeatureKind::Fsts, continual: false },
        Condition { kind: FeatureKind::Fsts, continual: true },
    ];

    /// File-system friendly name, e.g. `sts-star`.
    pub fn slug(&self) -> String {
        format!("{}{}", self.kind.as_str(), if self.continual { "-star" } else { "" })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            FeatureKind::None => "EtE",
            FeatureKind::Ae => "AE",
            FeatureKind::AeFm => "AE-FM",
            FeatureKind::Sts => "StS",
            FeatureKind::Fsts => "FStS",
        };
        write!(f, "{base}{}", if self.continual { "*" } else { "" })
    }
}

impl FromStr for Condition {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (base, continual) = match s.strip_suffix('*').or_else(|| s.strip_suffix("-star")) {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind: FeatureKind = base.parse().map_err(|_| ExperimentError::Config(format!("unknown condition {s:?}")))?;
        if kind == FeatureKind::None && continual {
            return Err(ExperimentError::Config("EtE has no extractor to train continually".into()));
        }
        Ok(Condition { kind, continual })
    }
}

/// Everything that determines a run's results. Worker count and output
/// location are not part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub condition: Condition,
    pub env: String,
    /// Episode cap override for built-in environments.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub budget: u64,
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub episodes_per_eval: usize,
    pub post_eval_episodes: usize,
    pub policy_hidden: usize,
    pub normalize: bool,
    pub dataset_episodes: usize,
    pub pretrain_epochs: usize,
    pub epochs_per_generation: usize,
    pub replacement_fraction: f64,
    pub batch_size: usize,
    pub extractor_lr: f64,
    pub chunk_len: usize,
    pub latent: usize,
    pub hidden: usize,
    pub window: usize,
    /// Drift probe marks as fractions of the budget; `0` is taken right
    /// after pretraining.
    pub drift_marks: Vec<f64>,
    pub probe_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let es = EsConfig::default();
        ExperimentConfig {
            condition: Condition { kind: FeatureKind::None, continual: false },
            env: "racecar".into(),
            max_steps: None,
            seed: 0,
            budget: 50_000_000,
            population: es.population,
            sigma: es.sigma,
            learning_rate: es.learning_rate,
            weight_decay: es.weight_decay,
            episodes_per_eval: es.episodes_per_eval,
            post_eval_episodes: 3,
            policy_hidden: 64,
            normalize: true,
            dataset_episodes: 1000,
            pretrain_epochs: 500,
            epochs_per_generation: 10,
            replacement_fraction: 0.01,
            batch_size: 32,
            extractor_lr: 1e-3,
            chunk_len: 16,
            latent: 50,
            hidden: 50,
            window: 5,
            drift_marks: vec![0.0, 0.5, 1.0],
            probe_episodes: 5,
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        self.es().validate()?;
        if self.post_eval_episodes == 0 {
            return bad("post_eval_episodes must be at least 1".into());
        }
        if self.policy_hidden == 0 {
            return bad("policy_hidden must be positive".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        if self.condition.kind.is_trainable() {
            if self.dataset_episodes == 0 {
                return bad("dataset_episodes must be at least 1".into());
            }
            if self.probe_episodes == 0 {
                return bad("probe_episodes must be at least 1".into());
            }
            if self.latent == 0 || self.hidden == 0 || self.window == 0 {
                return bad("latent, hidden and window must be positive".into());
            }
            if self.batch_size == 0 || self.chunk_len == 0 || !(self.extractor_lr > 0.0) {
                return bad("batch_size, chunk_len and extractor_lr must be positive".into());
            }
        }
        if self.condition.continual {
            self.continual().validate()?;
        }
        if self.drift_marks.iter().any(|m| !(0.0..=1.0).contains(m)) || self.drift_marks.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("drift_marks must be increasing fractions in [0, 1], got {:?}", self.drift_marks));
        }
        Ok(())
    }

    pub fn es(&self) -> EsConfig {
        EsConfig {
            population: self.population,
            sigma: self.sigma,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: seed::mix(self.seed, &[seed::tag("es")]),
            episodes_per_eval: self.episodes_per_eval,
        }
    }

    pub fn continual(&self) -> ContinualConfig {
        ContinualConfig {
            enabled: self.condition.continual,
            pretrain_epochs: self.pretrain_epochs,
            epochs_per_generation: self.epochs_per_generation,
            replacement_fraction: self.replacement_fraction,
        }
    }

    pub fn train(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.extractor_lr,
            chunk_len: self.chunk_len,
            seed: seed::mix(self.seed, &[seed::tag("extractor-train")]),
        }
    }

    pub fn dims(&self) -> ExtractorDims {
        ExtractorDims { latent: self.latent, hidden: self.hidden, window: self.window }
    }

    /// Absolute step marks of the drift probes.
    pub fn drift_steps(&self) -> Vec<u64> {
        self.drift_marks.iter().map(|f| (f * self.budget as f64).round() as u64).collect()
    }

    /// Canonical `key = value` text; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# featurevo experiment config v1\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("condition", self.condition.to_string());
        kv("env", self.env.clone());
        if let Some(m) = self.max_steps {
            kv("max_steps", m.to_string());
        }
        kv("seed", self.seed.to_string());
        kv("budget", self.budget.to_string());
        kv("population", self.population.to_string());
        kv("sigma", self.sigma.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("episodes_per_eval", self.episodes_per_eval.to_string());
        kv("post_eval_episodes", self.post_eval_episodes.to_string());
        kv("policy_hidden", self.policy_hidden.to_string());
        kv("normalize", self.normalize.to_string());
        kv("dataset_episodes", self.dataset_episodes.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("epochs_per_generation", self.epochs_per_generation.to_string());
        kv("replacement_fraction", self.replacement_fraction.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("extractor_lr", self.extractor_lr.to_string());
        kv("chunk_len", self.chunk_len.to_string());
        kv("latent", self.latent.to_string());
        kv("hidden", self.hidden.to_string());
        kv("window", self.window.to_string());
        kv("drift_marks", fmt_list(&self.drift_marks));
        kv("probe_episodes", self.probe_episodes.to_string());
        s
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ExperimentError> {
        let mut c = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim()).map_err(|e| ExperimentError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "condition" => self.condition = v_cond(value)?,
            "env" => self.env = value.to_string(),
            "max_steps" => self.max_steps = if value == "none" { None } else { Some(p(key, value)?) },
            "seed" => self.seed = p(key, value)?,
            "budget" => {
                self.budget = p::<f64>(key, value).and_then(|b| {
                    if b >= 0.0 && b.fract() == 0.0 {
                        Ok(b as u64)
                    } else {
                        Err(format!("invalid budget {value:?}"))
                    }
                })?
            }
            "population" => self.population = p(key, value)?,
            "sigma" => self.sigma = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "episodes_per_eval" => self.episodes_per_eval = p(key, value)?,
            "post_eval_episodes" => self.post_eval_episodes = p(key, value)?,
            "policy_hidden" => self.policy_hidden = p(key, value)?,
            "normalize" => self.normalize = p(key, value)?,
            "dataset_episodes" => self.dataset_episodes = p(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = p(key, value)?,
            "epochs_per_generation" => self.epochs_per_generation = p(key, value)?,
            "replacement_fraction" => self.replacement_fraction = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "extractor_lr" => self.extractor_lr = p(key, value)?,
            "chunk_len" => self.chunk_len = p(key, value)?,
            "latent" => self.latent = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "window" => self.window = p(key, value)?,
            "drift_marks" => {
                self.drift_marks =
                    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| p::<f64>(key, s.trim())).collect::<Result<_, _>>()?
            }
            "probe_episodes" => self.probe_episodes = p(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }
}

fn v_cond(value: &str) -> Result<Condition, String> {
    value.parse().map_err(|e: ExperimentError| e.to_string())
}
