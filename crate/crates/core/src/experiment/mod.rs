//! One full training run of one condition: dataset bootstrap, extractor
//! pretraining, the ES generation loop with optional continual extractor
//! updates, center post-evaluation, drift probes, checkpoints and run logs.
//! Also replicated suites over several conditions.

mod checkpoint;
mod config;
mod runlog;
mod suite;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub use config::{Condition, ExperimentConfig};
pub use runlog::{RunLog, RunRow, COLUMNS, RUNLOG_MAGIC};
pub use suite::{read_manifest, replication_seed, run_suite, ManifestEntry, SuiteOptions};

use crate::envs::{EnvError, EnvSource, EnvSpec, Environment};
use crate::es::{
    centered_rank_shape, es_step, evaluate_population, sample_perturbations, EpisodeOutcome, EsError, Normalizer, RunningStat,
};
use crate::features::{
    collect_random_dataset, continual_update, measure_mse, pretrain, Dataset, EpisodeRecord, FeatureError, FeatureExtractor, FeatureKind,
};
use crate::nn::{Activation, AdamState, FeedForwardNet, NnError};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run failed at generation {generation}: {message}; resumable from {}", checkpoint.as_ref().map_or("nothing (no output directory)".to_string(), |p| p.display().to_string()))]
    Failed { generation: u64, message: String, checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Es(#[from] EsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Policy network `[features, hidden, actions]`, tanh throughout; outputs
/// in `(-1, 1)` are mapped affinely onto the action range.
pub fn policy_net(input: usize, hidden: usize, output: usize, seed_value: u64) -> FeedForwardNet {
    let mut rng = seed::rng(seed_value, &[seed::tag("policy-init")]);
    let net = FeedForwardNet::random(&[input, hidden, output], Activation::Tanh, &mut rng);
    let pv = net.params().clone().prefixed("policy.");
    FeedForwardNet::from_params(&[input, hidden, output], Activation::Tanh, pv).expect("same layout")
}

pub fn policy_action(net: &FeedForwardNet, input: &[f64], spec: &EnvSpec) -> Result<Vec<f64>, NnError> {
    let y = net.forward(input)?;
    Ok(y.iter().zip(spec.action_low.iter().zip(&spec.action_high)).map(|(v, (lo, hi))| lo + 0.5 * (v + 1.0) * (hi - lo)).collect())
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub score: f64,
    pub steps: u64,
    /// Statistics of the raw (unnormalized) policy inputs seen.
    pub inputs: RunningStat,
    pub record: Option<EpisodeRecord>,
}

/// One deterministic-policy episode. The extractor's rollout state starts
/// fresh; policy inputs are normalized with the frozen `norm`.
pub fn run_episode(
    env: &mut dyn Environment,
    net: &FeedForwardNet,
    fx: &FeatureExtractor,
    norm: &Normalizer,
    seed_value: u64,
    record: bool,
) -> Result<EpisodeResult, ExperimentError> {
    let spec = env.spec().clone();
    let mut obs = env.reset(seed_value)?;
    let mut state = fx.new_rollout();
    let mut inputs = RunningStat::new(fx.feature_dim());
    let mut rec = record.then(EpisodeRecord::new);
    let mut prev: Option<Vec<f64>> = None;
    let (mut score, mut steps) = (0.0, 0u64);
    loop {
        let f = fx.extract(&mut state, &obs, prev.as_deref())?;
        inputs.push(&f);
        let action = policy_action(net, &norm.apply(&f), &spec)?;
        let t = env.step(&action)?;
        score += t.reward;
        steps += 1;
        let done = t.done;
        let next = t.obs;
        if let Some(r) = rec.as_mut() {
            r.push(std::mem::replace(&mut obs, next), action.clone());
        } else {
            obs = next;
        }
        if done {
            break;
        }
        prev = Some(action);
    }
    Ok(EpisodeResult { score, steps, inputs, record: rec })
}

/// Mean return of the center policy over `episodes` fresh seeded episodes,
/// with the total steps used.
pub fn post_evaluate(
    env: &mut dyn Environment,
    net: &FeedForwardNet,
    fx: &FeatureExtractor,
    norm: &Normalizer,
    episodes: usize,
    seed_value: u64,
) -> Result<(f64, u64), ExperimentError> {
    if episodes == 0 {
        return Err(ExperimentError::Config("post-evaluation needs at least one episode".into()));
    }
    let mut total = 0.0;
    let mut steps = 0;
    for e in 0..episodes {
        let r = run_episode(env, net, fx, norm, seed::mix(seed_value, &[e as u64]), false)?;
        total += r.score;
        steps += r.steps;
    }
    Ok((total / episodes as f64, steps))
}

/// Mean return of uniformly random actions over `episodes` seeded episodes.
pub fn random_baseline(env: &mut dyn Environment, episodes: usize, seed_value: u64) -> Result<f64, ExperimentError> {
    use rand::Rng;
    let spec = env.spec().clone();
    let mut total = 0.0;
    for e in 0..episodes {
        let mut rng = seed::rng(seed_value, &[seed::tag("baseline-actions"), e as u64]);
        env.reset(seed::mix(seed_value, &[seed::tag("baseline-episode"), e as u64]))?;
        loop {
            let a: Vec<f64> = spec.action_low.iter().zip(&spec.action_high).map(|(&l, &h)| rng.gen_range(l..=h)).collect();
            let t = env.step(&a)?;
            total += t.reward;
            if t.done {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Everything that evolves during a run. Cloned before each generation so
/// a failed generation leaves the last consistent state behind.
#[derive(Debug, Clone)]
pub(crate) struct RunState {
    pub setup_done: bool,
    pub generation: u64,
    pub env_steps: u64,
    /// Steps spent before generation 0 (dataset collection), charged to it.
    pub pending_steps: u64,
    pub center: Vec<f64>,
    pub adam: AdamState,
    pub stat: RunningStat,
    pub extractor: Arc<FeatureExtractor>,
    pub dataset: Option<Arc<Dataset>>,
    pub best_so_far: f64,
    pub train_mse: Option<f64>,
    pub next_mark: usize,
    pub finished: bool,
    pub log: RunLog,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    /// Write a checkpoint every this many generations (0 = only at the end
    /// and on failure).
    pub checkpoint_every: u64,
    /// Print a one-line summary per generation to standard error.
    pub progress: bool,
}

pub struct Experiment {
    config: ExperimentConfig,
    source: EnvSource,
    envs: Vec<Box<dyn Environment>>,
    spec: EnvSpec,
    policy: FeedForwardNet,
    state: RunState,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment").field("config", &self.config).field("generation", &self.state.generation).finish()
    }
}

fn make_envs(source: &EnvSource, workers: usize) -> Result<Vec<Box<dyn Environment>>, EnvError> {
    (0..workers.max(1)).map(|_| source.make()).collect()
}

impl Experiment {
    /// Builds environments and initial parameters; no environment steps are
    /// taken until [`Experiment::setup`] or the first generation.
    pub fn new(config: ExperimentConfig, workers: usize) -> Result<Self, ExperimentError> {
        config.validate()?;
        let source = EnvSource::parse(&config.env, config.max_steps)?;
        let envs = make_envs(&source, workers)?;
        let spec = envs[0].spec().clone();
        let kind = config.condition.kind;
        let extractor =
            FeatureExtractor::new(kind, spec.obs_dim, spec.act_dim, config.dims(), seed::mix(config.seed, &[seed::tag("extractor")]))?;
        let policy = policy_net(extractor.feature_dim(), config.policy_hidden, spec.act_dim, config.seed);
        let center = policy.params().values().to_vec();
        let es = config.es();
        let log = RunLog::new(config.hash(), config.seed, config.condition.to_string());
        let state = RunState {
            setup_done: false,
            generation: 0,
            env_steps: 0,
            pending_steps: 0,
            adam: es.adam(center.len()),
            center,
            stat: RunningStat::new(extractor.feature_dim()),
            extractor: Arc::new(extractor),
            dataset: None,
            best_so_far: f64::NEG_INFINITY,
            train_mse: None,
            next_mark: 0,
            finished: false,
            log,
        };
        Ok(Experiment { config, source, envs, spec, policy, state })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Input width of the constructed policy network.
    pub fn policy_input_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.state.extractor
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.state.dataset.as_deref()
    }

    pub fn center(&self) -> &[f64] {
        &self.state.center
    }

    pub fn log(&self) -> &RunLog {
        &self.state.log
    }

    pub fn generation(&self) -> u64 {
        self.state.generation
    }

    pub fn env_steps(&self) -> u64 {
        self.state.env_steps + self.state.pending_steps
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    fn center_net(&self) -> Result<FeedForwardNet, NnError> {
        let mut net = self.policy.clone();
        net.set_values(&self.state.center)?;
        Ok(net)
    }

    fn normalizer(&self) -> Normalizer {
        if self.config.normalize {
            self.state.stat.normalizer()
        } else {
            Normalizer::identity(self.state.stat.dim())
        }
    }

    fn probe(&mut self, net: &FeedForwardNet, norm: &Normalizer, seed_value: u64) -> Result<Option<f64>, ExperimentError> {
        let fx = self.state.extractor.clone();
        let mut episodes = Vec::with_capacity(self.config.probe_episodes);
        for e in 0..self.config.probe_episodes {
            let r = run_episode(self.envs[0].as_mut(), net, &fx, norm, seed::mix(seed_value, &[e as u64]), true)?;
            episodes.push(r.record.unwrap());
        }
        let ds = Dataset::from_episodes(self.spec.obs_dim, self.spec.act_dim, episodes)?;
        match measure_mse(&fx, &ds) {
            Ok(r) => Ok(Some(r.mse)),
            Err(FeatureError::Data(m)) => {
                log::warn!("drift probe skipped: {m}");
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Dataset collection, pretraining and the step-0 drift probe. Runs at
    /// most once; the first generation calls it when needed.
    pub fn setup(&mut self) -> Result<(), ExperimentError> {
        if self.state.setup_done {
            return Ok(());
        }
        if self.config.condition.kind != FeatureKind::None {
            let ds = collect_random_dataset(
                self.envs[0].as_mut(),
                self.config.dataset_episodes,
                seed::mix(self.config.seed, &[seed::tag("dataset")]),
            )?;
            self.state.pending_steps += ds.total_steps() as u64;
            let fx = Arc::make_mut(&mut self.state.extractor);
            let report = pretrain(fx, &ds, &self.config.train(self.config.pretrain_epochs))?;
            self.state.train_mse = Some(report.final_mse);
            self.state.dataset = Some(Arc::new(ds));
            let marks = self.config.drift_steps();
            if marks.first() == Some(&0) {
                let net = self.center_net()?;
                let norm = self.normalizer();
                self.state.log.initial_probe_mse = self.probe(&net, &norm, seed::mix(self.config.seed, &[seed::tag("probe-initial")]))?;
                self.state.next_mark = 1;
            }
        }
        self.state.setup_done = true;
        Ok(())
    }

    /// Runs one generation and returns its log row. State is left unchanged
    /// when this fails.
    pub fn step_generation(&mut self) -> Result<RunRow, ExperimentError> {
        if self.state.finished {
            return Err(ExperimentError::Config("the run has already used its budget".into()));
        }
        let snapshot = self.state.clone();
        let r = self.generation_inner();
        if r.is_err() {
            self.state = snapshot;
        }
        r
    }

    fn generation_inner(&mut self) -> Result<RunRow, ExperimentError> {
        self.setup()?;
        let g = self.state.generation;
        let cfg = self.config.clone();
        let es = cfg.es();
        let norm = self.normalizer();
        let fx = self.state.extractor.clone();
        let perts = sample_perturbations(&es, g, self.state.center.len())?;
        let (policy, source) = (&self.policy, &self.source);
        let eval = evaluate_population(&mut self.envs, &self.state.center, &perts, &es, g, |env, theta, key| {
            let mut net = policy.clone();
            net.set_values(theta)?;
            match run_episode(env.as_mut(), &net, &fx, &norm, key.seed, false) {
                Ok(r) => Ok(EpisodeOutcome { score: r.score, steps: r.steps, aux: r.inputs }),
                Err(e) => {
                    // A broken remote environment is replaced before the retry.
                    if let Ok(fresh) = source.make() {
                        *env = fresh;
                    }
                    Err(Box::new(e))
                }
            }
        })?;
        let utilities = centered_rank_shape(&eval.fitness)?;
        es_step(&mut self.state.center, &perts, &utilities, &es, &mut self.state.adam)?;
        for per in &eval.aux {
            for s in per {
                self.state.stat.merge(s);
            }
        }
        let mut gen_steps = self.state.pending_steps + eval.steps;
        let net = self.center_net()?;
        let (center_score, post_steps) = post_evaluate(
            self.envs[0].as_mut(),
            &net,
            &fx,
            &norm,
            cfg.post_eval_episodes,
            seed::mix(cfg.seed, &[seed::tag("post-eval"), g]),
        )?;
        gen_steps += post_steps;

        if cfg.condition.continual {
            let r = run_episode(self.envs[0].as_mut(), &net, &fx, &norm, seed::mix(cfg.seed, &[seed::tag("continual"), g]), true)?;
            gen_steps += r.steps;
            let ds = Arc::make_mut(self.state.dataset.as_mut().expect("dataset exists after setup"));
            let fx_mut = Arc::make_mut(&mut self.state.extractor);
            if let Some((_, report)) =
                continual_update(fx_mut, ds, vec![r.record.unwrap()], &cfg.continual(), &cfg.train(cfg.epochs_per_generation))?
            {
                self.state.train_mse = Some(report.final_mse);
            }
        }
        let env_steps = self.state.env_steps + gen_steps;

        let mut probe_mse = None;
        if cfg.condition.kind != FeatureKind::None {
            let marks = cfg.drift_steps();
            let mut crossed = false;
            while self.state.next_mark < marks.len() && env_steps >= marks[self.state.next_mark] {
                self.state.next_mark += 1;
                crossed = true;
            }
            if crossed {
                probe_mse = self.probe(&net, &norm, seed::mix(cfg.seed, &[seed::tag("probe"), g]))?;
            }
        }

        let pop_mean = eval.fitness.iter().sum::<f64>() / eval.fitness.len() as f64;
        let pop_max = eval.fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.state.best_so_far = self.state.best_so_far.max(center_score);
        let row = RunRow {
            generation: g,
            env_steps,
            gen_steps,
            center_score,
            best_so_far: self.state.best_so_far,
            pop_mean,
            pop_max,
            train_mse: self.state.train_mse,
            probe_mse,
        };
        self.state.log.rows.push(row.clone());
        self.state.env_steps = env_steps;
        self.state.pending_steps = 0;
        self.state.generation += 1;
        if env_steps >= cfg.budget {
            self.state.finished = true;
        }
        Ok(row)
    }

    /// Post-evaluates the current center; the run state is not changed.
    pub fn evaluate_center(&mut self, episodes: usize, seed_value: u64) -> Result<(f64, u64), ExperimentError> {
        let net = self.center_net()?;
        let norm = self.normalizer();
        let fx = self.state.extractor.clone();
        post_evaluate(self.envs[0].as_mut(), &net, &fx, &norm, episodes, seed_value)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.config, &self.state)
    }

    /// Restores a run from checkpoint bytes with fresh environments.
    pub fn resume(bytes: &[u8], workers: usize) -> Result<Self, ExperimentError> {
        let (config, state) = checkpoint::decode(bytes)?;
        let mut exp = Experiment::new(config, workers)?;
        if state.center.len() != exp.state.center.len() || state.stat.dim() != exp.state.stat.dim() {
            return Err(ExperimentError::Checkpoint("state does not match the configured architecture".into()));
        }
        exp.state = state;
        Ok(exp)
    }

    /// Writes the run log and a checkpoint into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<PathBuf, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let cfg = dir.join("config.cfg");
        std::fs::write(&cfg, self.config.to_text()).map_err(io_err(&cfg))?;
        let log = dir.join("runlog.csv");
        std::fs::write(&log, self.state.log.to_csv()).map_err(io_err(&log))?;
        let ck = dir.join("checkpoint.bin");
        let tmp = dir.join("checkpoint.bin.tmp");
        std::fs::write(&tmp, self.checkpoint_bytes()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &ck).map_err(io_err(&ck))?;
        Ok(ck)
    }

    /// Runs generations until the budget is used.
    pub fn run(&mut self, opts: &RunOptions) -> Result<RunLog, ExperimentError> {
        while !self.state.finished {
            let t = Instant::now();
            match self.step_generation() {
                Ok(row) => {
                    if opts.progress {
                        eprintln!(
                            "[{}] gen {} steps {} center {:.3} best {:.3} pop_mean {:.3}{}{} ({:.1}s)",
                            self.config.condition,
                            row.generation,
                            row.env_steps,
                            row.center_score,
                            row.best_so_far,
                            row.pop_mean,
                            row.train_mse.map(|m| format!(" train_mse {m:.3e}")).unwrap_or_default(),
                            row.probe_mse.map(|m| format!(" probe_mse {m:.3e}")).unwrap_or_default(),
                            t.elapsed().as_secs_f64()
                        );
                    }
                    if let Some(dir) = &opts.out_dir {
                        if opts.checkpoint_every > 0 && row.generation % opts.checkpoint_every == 0 {
                            self.write_outputs(dir)?;
                        }
                    }
                }
                Err(e) => {
                    let checkpoint = match &opts.out_dir {
                        Some(dir) => Some(self.write_outputs(dir)?),
                        None => None,
                    };
                    return Err(ExperimentError::Failed { generation: self.state.generation, message: e.to_string(), checkpoint });
                }
            }
        }
        if let Some(dir) = &opts.out_dir {
            self.write_outputs(dir)?;
        }
        Ok(self.state.log.clone())
    }
}

/// Runs `config` from scratch, or resumes from `out_dir/checkpoint.bin`
/// when `resume` is set and the file exists.
pub fn run_experiment(config: ExperimentConfig, opts: &RunOptions, resume: bool) -> Result<RunLog, ExperimentError> {
    let mut exp = match (&opts.out_dir, resume) {
        (Some(dir), true) if dir.join("checkpoint.bin").exists() => {
            let path = dir.join("checkpoint.bin");
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let exp = Experiment::resume(&bytes, opts.workers)?;
            if exp.config != config {
                return Err(ExperimentError::Checkpoint(format!(
                    "{} was written for a different configuration (hash {})",
                    path.display(),
                    exp.config.hash()
                )));
            }
            exp
        }
        _ => Experiment::new(config, opts.workers)?,
    };
    exp.run(opts)
}
