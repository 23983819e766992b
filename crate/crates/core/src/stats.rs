//! Rank tests, bootstrap intervals and learning-curve aggregation.

use rand::Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::experiment::RunLog;
use crate::seed;

/// Largest `|a|·|b|` handled by the exact null distribution.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("sample {0:?} is empty")]
    Empty(String),
    #[error("sample {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("sample {label:?} has {len} values, at least {min} are required")]
    TooSmall { label: String, len: usize, min: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Labelled scores, one per replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        let s = SampleSet { label: label.into(), values };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.values.is_empty() {
            return Err(StatsError::Empty(self.label.clone()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(self.label.clone()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided p-value in (0, 1].
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values` and the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of rank assignments giving each value of U for sizes `(n, m)`,
/// indexed by U in `0..=n*m`.
pub fn u_distribution(n: usize, m: usize) -> Vec<u64> {
    // c[i][j][u] via rolling over i: c(i, j, u) = c(i-1, j, u-j) + c(i, j-1, u)
    let max = n * m;
    let mut prev: Vec<Vec<u64>> = (0..=m)
        .map(|_| {
            let mut v = vec![0u64; max + 1];
            v[0] = 1;
            v
        })
        .collect();
    for i in 1..=n {
        let mut cur: Vec<Vec<u64>> = vec![vec![0u64; max + 1]; m + 1];
        cur[0][0] = 1;
        for j in 1..=m {
            for u in 0..=i * j {
                let a = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(m)
}

/// Two-sided Mann-Whitney U test of `a` against `b`. Exact when tie-free
/// and `|a|·|b| <= EXACT_LIMIT`, normal approximation otherwise.
pub fn mann_whitney_u(a: &SampleSet, b: &SampleSet) -> Result<MannWhitney, StatsError> {
    rank_test(a, b, true)
}

/// The normal-approximation branch alone, with tie and continuity correction.
pub fn mann_whitney_u_normal(a: &SampleSet, b: &SampleSet) -> Result<MannWhitney, StatsError> {
    rank_test(a, b, false)
}

fn rank_test(a: &SampleSet, b: &SampleSet, allow_exact: bool) -> Result<MannWhitney, StatsError> {
    a.check()?;
    b.check()?;
    let (n, m) = (a.len(), b.len());
    let mut all = a.values.clone();
    all.extend_from_slice(&b.values);
    let (ranks, ties) = midranks(&all);
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u_a = rank_sum - (n * (n + 1)) as f64 / 2.0;
    let u_b = (n * m) as f64 - u_a;
    if allow_exact && n * m <= EXACT_LIMIT && ties.is_empty() {
        let counts = u_distribution(n, m);
        let total: u64 = counts.iter().sum();
        let u = u_a as usize;
        let le: u64 = counts[..=u].iter().sum();
        let ge: u64 = counts[u..].iter().sum();
        let p = (2 * le.min(ge)) as f64 / total as f64;
        return Ok(MannWhitney { u_a, u_b, p: p.min(1.0), exact: true });
    }
    let total = (n + m) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (total * (total - 1.0));
    let var = (n * m) as f64 / 12.0 * ((total + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (((u_a - (n * m) as f64 / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
    };
    Ok(MannWhitney { u_a, u_b, p, exact: false })
}

/// Percentile interval of the bootstrap distribution of the mean.
pub fn bootstrap_ci_mean(sample: &SampleSet, level: f64, resamples: usize, seed_value: u64) -> Result<(f64, f64), StatsError> {
    sample.check()?;
    if sample.len() < 2 {
        return Err(StatsError::TooSmall { label: sample.label.clone(), len: sample.len(), min: 2 });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Invalid(format!("confidence level must be in (0, 1), got {level}")));
    }
    if resamples == 0 {
        return Err(StatsError::Invalid("at least one resample is required".into()));
    }
    let v = &sample.values;
    let n = v.len();
    let mut rng = seed::rng(seed_value, &[seed::tag("bootstrap")]);
    let mut means: Vec<f64> = (0..resamples).map(|_| (0..n).map(|_| v[rng.gen_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let k = ((q * resamples as f64).ceil() as usize).clamp(1, resamples);
        means[k - 1]
    };
    let tail = (1.0 - level) / 2.0;
    Ok((at(tail), at(1.0 - tail)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub steps: u64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Best-so-far of `log` at `mark`: the value of the last generation that
/// finished at or before the mark, or the first generation's value if none.
pub fn best_at(log: &RunLog, mark: u64) -> Option<f64> {
    let first = log.rows.first()?;
    Some(log.rows.iter().take_while(|r| r.env_steps <= mark).last().unwrap_or(first).best_so_far)
}

/// Mean and bootstrap interval of best-so-far across `logs` at each mark.
pub fn aggregate_curves(
    logs: &[RunLog],
    marks: &[u64],
    level: f64,
    resamples: usize,
    seed_value: u64,
) -> Result<Vec<CurvePoint>, StatsError> {
    if logs.is_empty() {
        return Err(StatsError::Invalid("at least one run log is required".into()));
    }
    if marks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::Invalid("marks must be strictly increasing".into()));
    }
    if let Some(i) = logs.iter().position(|l| l.rows.is_empty()) {
        return Err(StatsError::Invalid(format!("run log {i} has no generations")));
    }
    marks
        .iter()
        .map(|&mark| {
            let values: Vec<f64> = logs.iter().map(|l| best_at(l, mark).expect("non-empty")).collect();
            let sample = SampleSet::new(format!("steps {mark}"), values)?;
            let mean = sample.values.iter().sum::<f64>() / sample.len() as f64;
            let (lo, hi) =
                if sample.len() < 2 { (mean, mean) } else { bootstrap_ci_mean(&sample, level, resamples, seed::mix(seed_value, &[mark]))? };
            Ok(CurvePoint { steps: mark, mean, lo, hi })
        })
        .collect()
}

/// `count` evenly spaced marks ending at the longest run.
pub fn even_marks(logs: &[RunLog], count: usize) -> Vec<u64> {
    let end = logs.iter().filter_map(|l| l.last().map(|r| r.env_steps)).max().unwrap_or(0);
    let mut marks: Vec<u64> = (1..=count as u64).map(|i| end * i / count as u64).collect();
    marks.dedup();
    marks
}
