use std::fmt::Write as _;

use super::ExperimentError;

pub const RUNLOG_MAGIC: &str = "# featurevo-runlog v1";
pub const COLUMNS: [&str; 9] =
    ["generation", "env_steps", "gen_steps", "center_score", "best_so_far", "pop_mean", "pop_max", "train_mse", "probe_mse"];

/// One generation. `gen_steps` of generation 0 also covers dataset
/// collection, so the column sums to `env_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub generation: u64,
    pub env_steps: u64,
    pub gen_steps: u64,
    pub center_score: f64,
    pub best_so_far: f64,
    pub pop_mean: f64,
    pub pop_max: f64,
    pub train_mse: Option<f64>,
    pub probe_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config_hash: String,
    pub seed: u64,
    pub condition: String,
    pub code_version: String,
    /// Probe error right after pretraining, before any policy update.
    pub initial_probe_mse: Option<f64>,
    pub rows: Vec<RunRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn new(config_hash: String, seed: u64, condition: String) -> Self {
        RunLog {
            config_hash,
            seed,
            condition,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            initial_probe_mse: None,
            rows: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }

    pub fn final_best(&self) -> Option<f64> {
        self.rows.last().map(|r| r.best_so_far)
    }

    /// Probe MSEs of the run, `(env_steps, mse)`, the initial one at step 0.
    pub fn probes(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64)> = self.initial_probe_mse.map(|m| (0, m)).into_iter().collect();
        out.extend(self.rows.iter().filter_map(|r| r.probe_mse.map(|m| (r.env_steps, m))));
        out
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{RUNLOG_MAGIC}").unwrap();
        writeln!(s, "# config_hash: {}", self.config_hash).unwrap();
        writeln!(s, "# seed: {}", self.seed).unwrap();
        writeln!(s, "# condition: {}", self.condition).unwrap();
        writeln!(s, "# code_version: {}", self.code_version).unwrap();
        writeln!(s, "# initial_probe_mse: {}", opt(self.initial_probe_mse)).unwrap();
        writeln!(s, "{}", COLUMNS.join(",")).unwrap();
        s
    }

    pub fn row_line(r: &RunRow) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.generation,
            r.env_steps,
            r.gen_steps,
            r.center_score,
            r.best_so_far,
            r.pop_mean,
            r.pop_max,
            opt(r.train_mse),
            opt(r.probe_mse)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        for r in &self.rows {
            s.push_str(&Self::row_line(r));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ExperimentError> {
        let bad = |m: String| ExperimentError::Format(format!("run log: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_MAGIC) {
            return Err(bad("missing version header".into()));
        }
        let mut field = |name: &str| -> Result<String, ExperimentError> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
            line.strip_prefix(&format!("# {name}: "))
                .or_else(|| line.strip_prefix(&format!("# {name}:")))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {name} header, got {line:?}")))
        };
        let config_hash = field("config_hash")?;
        let seed = field("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let condition = field("condition")?;
        let code_version = field("code_version")?;
        let initial_probe_mse = parse_opt(&field("initial_probe_mse")?).map_err(bad)?;
        if lines.next() != Some(COLUMNS.join(",").as_str()) {
            return Err(bad("unexpected column header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != COLUMNS.len() {
                return Err(bad(format!("row {i}: {} fields", f.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("row {i}: bad integer {s:?}")));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {i}: bad number {s:?}")));
            rows.push(RunRow {
                generation: int(f[0])?,
                env_steps: int(f[1])?,
                gen_steps: int(f[2])?,
                center_score: num(f[3])?,
                best_so_far: num(f[4])?,
                pop_mean: num(f[5])?,
                pop_max: num(f[6])?,
                train_mse: parse_opt(f[7]).map_err(bad)?,
                probe_mse: parse_opt(f[8]).map_err(bad)?,
            });
        }
        Ok(RunLog { config_hash, seed, condition, code_version, initial_probe_mse, rows })
    }

    /// Checks the log invariants: strictly increasing step counter equal to
    /// the running sum of per-generation steps, non-decreasing best-so-far.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut sum = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, r) in self.rows.iter().enumerate() {
            if r.generation != i as u64 {
                return Err(format!("row {i} has generation {}", r.generation));
            }
            sum += r.gen_steps;
            if r.env_steps != sum {
                return Err(format!("row {i}: env_steps {} but steps sum to {sum}", r.env_steps));
            }
            if r.gen_steps == 0 {
                return Err(format!("row {i}: no steps consumed"));
            }
            if r.best_so_far < best {
                return Err(format!("row {i}: best-so-far decreased"));
            }
            best = r.best_so_far;
        }
        Ok(())
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
    }
}
