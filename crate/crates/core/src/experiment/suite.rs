use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, run_experiment, Condition, ExperimentConfig, ExperimentError, RunOptions};
use crate::seed;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub replications: usize,
    pub conditions: Vec<Condition>,
    pub workers: usize,
    pub progress: bool,
    pub checkpoint_every: u64,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition: String,
    pub replication: usize,
    pub seed: u64,
    pub status: String,
    /// Run directory relative to the suite directory.
    pub dir: String,
    pub runlog_sha256: Option<String>,
    pub final_best: Option<f64>,
    pub error: Option<String>,
}

impl ManifestEntry {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Seed of replication `r`.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    seed::mix(base, &[seed::tag("replication"), r as u64])
}

/// Runs every (condition, replication) pair into `out/<condition>/rep<r>`.
/// Failed runs are recorded in the manifest and the suite continues.
pub fn run_suite(base: &ExperimentConfig, opts: &SuiteOptions, out: &Path) -> Result<Vec<ManifestEntry>, ExperimentError> {
    if opts.replications == 0 {
        return Err(ExperimentError::Config("replications must be at least 1".into()));
    }
    if opts.conditions.is_empty() {
        return Err(ExperimentError::Config("at least one condition is required".into()));
    }
    for &condition in &opts.conditions {
        ExperimentConfig { condition, ..base.clone() }.validate()?;
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let manifest_path = out.join("manifest.jsonl");
    let mut manifest = std::fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut entries = Vec::new();
    for &condition in &opts.conditions {
        for r in 0..opts.replications {
            let seed_value = replication_seed(base.seed, r);
            let config = ExperimentConfig { condition, seed: seed_value, ..base.clone() };
            let rel = PathBuf::from(condition.slug()).join(format!("rep{r}"));
            let dir = out.join(&rel);
            let run_opts = RunOptions {
                workers: opts.workers,
                out_dir: Some(dir.clone()),
                checkpoint_every: opts.checkpoint_every,
                progress: opts.progress,
            };
            let entry = match run_experiment(config, &run_opts, false) {
                Ok(log) => {
                    let csv = log.to_csv();
                    ManifestEntry {
                        condition: condition.to_string(),
                        replication: r,
                        seed: seed_value,
                        status: "ok".into(),
                        dir: rel.display().to_string(),
                        runlog_sha256: Some(format!("{:x}", Sha256::digest(csv.as_bytes()))),
                        final_best: log.final_best(),
                        error: None,
                    }
                }
                Err(e) => {
                    log::error!("{condition} replication {r} failed: {e}");
                    ManifestEntry {
                        condition: condition.to_string(),
                        replication: r,
                        seed: seed_value,
                        status: "failed".into(),
                        dir: rel.display().to_string(),
                        runlog_sha256: None,
                        final_best: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            writeln!(manifest, "{}", serde_json::to_string(&entry).expect("manifest entries serialize")).map_err(io_err(&manifest_path))?;
            entries.push(entry);
        }
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ExperimentError::Format(format!("{}: {e}", path.display()))))
        .collect()
}
