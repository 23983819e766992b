use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use featurevo::envs::EnvSource;
use featurevo::experiment::{run_experiment, run_suite, Condition, Experiment, ExperimentConfig, RunLog, RunOptions, SuiteOptions};
use featurevo::features::{collect_random_dataset, pretrain, Dataset, FeatureExtractor};
use featurevo::seed;
use featurevo::stats::{aggregate_curves, even_marks, mann_whitney_u, MannWhitney, SampleSet};

/// ES policy training on raw or self-supervised features.
#[derive(Parser, Debug)]
#[command(name = "featurevo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect a random-action dataset.
    Collect(CollectArgs),
    /// Pretrain a feature extractor on a dataset.
    Pretrain(PretrainArgs),
    /// Run one training run (run log and checkpoints in the output directory).
    Train(TrainArgs),
    /// Run every condition for several seeded replications.
    Suite(SuiteArgs),
    /// Post-evaluate the center policy of a run checkpoint.
    Eval(EvalArgs),
    /// Drift-probe MSEs of every run log under a directory, as CSV.
    MseReport(LogsArgs),
    /// Mann-Whitney U test on the final best-so-far scores of two run groups.
    Compare(CompareArgs),
    /// Mean and bootstrap interval of best-so-far curves, as CSV.
    ExportCurves(CurvesArgs),
    /// Serve a built-in environment over the bridge protocol.
    BridgeServe(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Condition: EtE, AE, AE*, AE-FM, AE-FM*, StS, StS*, FStS or FStS*.
    #[arg(long)]
    condition: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Environment: racecar, swingup, echo, cmd:<command> or tcp:<host:port>.
    #[arg(long)]
    env: Option<String>,
    /// Environment steps for the run, e.g. 2e6.
    #[arg(long)]
    budget: Option<String>,
    /// Override any config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_text(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (k, v) in [("condition", &self.condition), ("env", &self.env), ("budget", &self.budget)] {
            if let Some(v) = v {
                pairs.push((k.into(), v.clone()));
            }
        }
        if let Some(s) = self.seed {
            pairs.push(("seed".into(), s.to_string()));
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        for (k, v) in pairs {
            c.set(&k, &v).map_err(anyhow::Error::msg)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("FEATUREVO_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Episodes to collect (default: the config's dataset_episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Output file (default: $FEATUREVO_OUT/dataset.bin).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset from `collect`; collected on the fly when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Epochs (default: the config's pretrain_epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// Output file (default: $FEATUREVO_OUT/extractor.bin).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Run directory (default: $FEATUREVO_OUT/<condition>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Write a checkpoint every N generations (0: only at the end).
    #[arg(long, default_value_t = 10)]
    checkpoint_every: u64,
    /// No per-generation progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated conditions (default: all nine).
    #[arg(long)]
    conditions: Option<String>,
    /// Seeded replications per condition.
    #[arg(long, default_value_t = 5)]
    replications: usize,
    /// Suite directory (default: $FEATUREVO_OUT/suite).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write a checkpoint every N generations in each run (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// No per-run progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory containing checkpoint.bin, or the checkpoint file.
    #[arg(long)]
    run: PathBuf,
    /// Fresh episodes to average.
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Seed of the evaluation episodes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LogsArgs {
    /// Directory searched recursively for runlog.csv files.
    #[arg(long)]
    logs: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// First group: directory searched recursively for runlog.csv files.
    #[arg(long)]
    a: PathBuf,
    /// Second group.
    #[arg(long)]
    b: PathBuf,
    /// Also write the JSON result to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    /// Directory searched recursively for runlog.csv files.
    #[arg(long)]
    logs: PathBuf,
    /// Number of evenly spaced step marks.
    #[arg(long, default_value_t = 10)]
    marks: usize,
    /// Confidence level of the interval.
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    /// Seed of the bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// racecar, swingup or echo.
    #[arg(long, default_value = "echo")]
    env: String,
    /// Episode cap (default: the environment's own).
    #[arg(long)]
    max_steps: Option<usize>,
    /// Listen on this address for one client instead of using stdin/stdout.
    #[arg(long)]
    tcp: Option<String>,
    /// Write the served reward ledger as JSON on exit.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn collect(args: CollectArgs) -> Result<()> {
    let config = args.cfg.load()?;
    let episodes = args.episodes.unwrap_or(config.dataset_episodes);
    let mut env = EnvSource::parse(&config.env, config.max_steps)?.make()?;
    let ds = collect_random_dataset(env.as_mut(), episodes, seed::mix(config.seed, &[seed::tag("dataset")]))?;
    let out = args.out.unwrap_or_else(|| out_root().join("dataset.bin"));
    write_file(&out, &ds.to_bytes())?;
    println!("{} episodes, {} steps, checksum {} -> {}", ds.episode_count(), ds.total_steps(), ds.checksum(), out.display());
    Ok(())
}

fn pretrain_cmd(args: PretrainArgs) -> Result<()> {
    let config = args.cfg.load()?;
    if !config.condition.kind.is_trainable() {
        bail!("condition {} has no extractor to pretrain", config.condition);
    }
    let mut env = EnvSource::parse(&config.env, config.max_steps)?.make()?;
    let ds = match &args.dataset {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Dataset::from_bytes(&bytes).with_context(|| format!("in {}", p.display()))?
        }
        None => collect_random_dataset(env.as_mut(), config.dataset_episodes, seed::mix(config.seed, &[seed::tag("dataset")]))?,
    };
    let spec = env.spec();
    if ds.obs_dim() != spec.obs_dim || ds.act_dim() != spec.act_dim {
        bail!("dataset is {}x{} but the environment is {}x{}", ds.obs_dim(), ds.act_dim(), spec.obs_dim, spec.act_dim);
    }
    let mut fx = FeatureExtractor::new(
        config.condition.kind,
        spec.obs_dim,
        spec.act_dim,
        config.dims(),
        seed::mix(config.seed, &[seed::tag("extractor")]),
    )?;
    let report = pretrain(&mut fx, &ds, &config.train(args.epochs.unwrap_or(config.pretrain_epochs)))?;
    let out = args.out.unwrap_or_else(|| out_root().join("extractor.bin"));
    write_file(&out, &fx.to_bytes())?;
    println!(
        "{}: mse {:.6e} -> {:.6e}, checksum {} -> {}",
        config.condition.kind,
        report.initial_mse,
        report.final_mse,
        fx.checksum(),
        out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let config = args.cfg.load()?;
    let dir = args.out.unwrap_or_else(|| out_root().join(format!("{}-seed{}", config.condition.slug(), config.seed)));
    let opts =
        RunOptions { workers: args.workers, out_dir: Some(dir.clone()), checkpoint_every: args.checkpoint_every, progress: !args.quiet };
    let log = run_experiment(config, &opts, args.resume)?;
    let last = log.last().context("run produced no generations")?;
    println!(
        "{} seed {}: {} generations, {} steps, best {} -> {}",
        log.condition,
        log.seed,
        log.rows.len(),
        last.env_steps,
        last.best_so_far,
        dir.display()
    );
    Ok(())
}

fn suite(args: SuiteArgs) -> Result<()> {
    let base = args.cfg.load()?;
    let conditions = match &args.conditions {
        Some(s) => s.split(',').map(|c| c.trim().parse::<Condition>()).collect::<Result<Vec<_>, _>>()?,
        None => Condition::ALL.to_vec(),
    };
    let out = args.out.unwrap_or_else(|| out_root().join("suite"));
    let opts = SuiteOptions {
        replications: args.replications,
        conditions,
        workers: args.workers,
        progress: !args.quiet,
        checkpoint_every: args.checkpoint_every,
    };
    let entries = run_suite(&base, &opts, &out)?;
    let failed = entries.iter().filter(|e| !e.is_ok()).count();
    println!("{} runs, {failed} failed -> {}", entries.len(), out.join("manifest.jsonl").display());
    if failed > 0 {
        bail!("{failed} of {} runs failed", entries.len());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let path = if args.run.is_dir() { args.run.join("checkpoint.bin") } else { args.run.clone() };
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut exp = Experiment::resume(&bytes, 1).with_context(|| format!("in {}", path.display()))?;
    let (mean, steps) = exp.evaluate_center(args.episodes, args.seed)?;
    println!(
        "{} seed {} generation {}: mean score {mean} over {} episodes ({steps} steps)",
        exp.config().condition,
        exp.config().seed,
        exp.generation(),
        args.episodes
    );
    Ok(())
}

/// Every `runlog.csv` under `dir`, sorted by path.
fn find_logs(dir: &Path) -> Result<Vec<(PathBuf, RunLog)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == "runlog.csv") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths).with_context(|| format!("reading {}", dir.display()))?;
    paths.sort();
    if paths.is_empty() {
        bail!("no runlog.csv found under {}", dir.display());
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let log = RunLog::from_csv(&text).with_context(|| format!("in {}", p.display()))?;
            Ok((p, log))
        })
        .collect()
}

fn mse_report(args: LogsArgs) -> Result<()> {
    let logs = find_logs(&args.logs)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "run,condition,seed,env_steps,probe_mse")?;
    for (path, log) in &logs {
        let run = path.parent().and_then(|p| p.strip_prefix(&args.logs).ok()).unwrap_or(Path::new(""));
        for (steps, mse) in log.probes() {
            writeln!(out, "{},{},{},{steps},{mse}", run.display(), log.condition, log.seed)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GroupSummary {
    label: String,
    n: usize,
    median: f64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Comparison {
    a: GroupSummary,
    b: GroupSummary,
    #[serde(flatten)]
    test: MannWhitney,
}

fn final_scores(dir: &Path) -> Result<SampleSet> {
    let values = find_logs(dir)?
        .into_iter()
        .map(|(p, l)| l.final_best().with_context(|| format!("{} has no generations", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::new(dir.display().to_string(), values)?)
}

fn compare(args: CompareArgs) -> Result<()> {
    let a = final_scores(&args.a)?;
    let b = final_scores(&args.b)?;
    let test = mann_whitney_u(&a, &b)?;
    let summary = |s: &SampleSet| GroupSummary { label: s.label.clone(), n: s.len(), median: s.median(), values: s.values.clone() };
    let result = Comparison { a: summary(&a), b: summary(&b), test };
    println!("{:<40} {:>4} {:>14}", "group", "n", "median");
    for g in [&result.a, &result.b] {
        println!("{:<40} {:>4} {:>14.6}", g.label, g.n, g.median);
    }
    println!("U_a = {}  U_b = {}  p = {:.6} ({})", test.u_a, test.u_b, test.p, if test.exact { "exact" } else { "normal approx." });
    let json = serde_json::to_string(&result)?;
    println!("{json}");
    if let Some(p) = &args.json {
        write_file(p, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn export_curves(args: CurvesArgs) -> Result<()> {
    if args.marks == 0 {
        bail!("--marks must be at least 1");
    }
    let logs: Vec<RunLog> = find_logs(&args.logs)?.into_iter().map(|(_, l)| l).collect();
    let marks = even_marks(&logs, args.marks);
    let curve = aggregate_curves(&logs, &marks, args.level, args.resamples, args.seed)?;
    let mut text = String::from("steps,mean,lo,hi\n");
    for p in curve {
        text.push_str(&format!("{},{},{},{}\n", p.steps, p.mean, p.lo, p.hi));
    }
    match &args.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn bridge_serve(args: ServeArgs) -> Result<()> {
    if !matches!(args.env.as_str(), "racecar" | "swingup" | "echo") {
        bail!("bridge-serve hosts built-in environments only, got {:?}", args.env);
    }
    let mut env = EnvSource::parse(&args.env, args.max_steps)?.make()?;
    let summary = match &args.tcp {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            featurevo::bridge::serve_tcp(env.as_mut(), &listener)?
        }
        None => {
            let stdin = std::io::stdin();
            featurevo::bridge::serve(env.as_mut(), BufReader::new(stdin.lock()), std::io::stdout().lock())?
        }
    };
    if let Some(p) = &args.ledger {
        write_file(p, format!("{}\n", serde_json::to_string(&summary)?).as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Collect(a) => collect(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Train(a) => train(a),
        Command::Suite(a) => suite(a),
        Command::Eval(a) => eval(a),
        Command::MseReport(a) => mse_report(a),
        Command::Compare(a) => compare(a),
        Command::ExportCurves(a) => export_curves(a),
        Command::BridgeServe(a) => bridge_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
