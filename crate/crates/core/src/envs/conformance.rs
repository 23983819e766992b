//! Property suite every [`Environment`] must pass, run against built-in tasks
//! and bridged servers alike.

use rand::Rng;

use super::{EnvError, Environment, Transition};
use crate::seed;

#[derive(Debug, Clone)]
pub struct ConformanceOptions {
    pub seeds: Vec<u64>,
    /// Actions are drawn uniformly from `[-scale, scale]`, so values above 1
    /// exercise clamping.
    pub action_scale: f64,
    /// Sector count for tasks reporting `StepInfo::sector`; enables the
    /// forward-crossing reward check.
    pub sector_count: Option<usize>,
}

impl Default for ConformanceOptions {
    fn default() -> Self {
        ConformanceOptions { seeds: vec![0, 1, 7], action_scale: 1.2, sector_count: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConformanceReport {
    pub episodes: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub clamped_steps: usize,
    pub sector_crossings: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("{check}: {detail}")]
pub struct ConformanceFailure {
    pub check: &'static str,
    pub detail: String,
}

fn fail<T>(check: &'static str, detail: impl Into<String>) -> Result<T, ConformanceFailure> {
    Err(ConformanceFailure { check, detail: detail.into() })
}

struct Episode {
    initial: Vec<f64>,
    transitions: Vec<Transition>,
}

fn run_episode(env: &mut dyn Environment, episode_seed: u64, scale: f64) -> Result<Episode, ConformanceFailure> {
    let spec = env.spec().clone();
    let initial = env.reset(episode_seed).or_else(|e| fail("reset", e.to_string()))?;
    let mut rng = seed::rng(episode_seed, &[seed::tag("conformance-actions")]);
    let mut transitions = Vec::new();
    loop {
        let action: Vec<f64> = (0..spec.act_dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        let t = env.step(&action).or_else(|e| fail("step", e.to_string()))?;
        let done = t.done;
        transitions.push(t);
        if done {
            break;
        }
        if transitions.len() > spec.max_steps {
            return fail("episode length", format!("no done flag after {} steps", transitions.len()));
        }
    }
    Ok(Episode { initial, transitions })
}

fn check_obs(obs: &[f64], dim: usize, bounds: Option<(f64, f64)>, at: &str) -> Result<(), ConformanceFailure> {
    if obs.len() != dim {
        return fail("observation dimension", format!("{at}: length {} != {dim}", obs.len()));
    }
    for (j, &v) in obs.iter().enumerate() {
        if !v.is_finite() {
            return fail("observation finite", format!("{at}: component {j} = {v}"));
        }
        if let Some((lo, hi)) = bounds {
            if v < lo || v > hi {
                return fail("observation bounds", format!("{at}: component {j} = {v} outside [{lo}, {hi}]"));
            }
        }
    }
    Ok(())
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Runs determinism, bounds, absorbing-done and reward-conservation checks.
/// `make` must build independent fresh instances.
pub fn run_suite<F>(make: F, opts: &ConformanceOptions) -> Result<ConformanceReport, ConformanceFailure>
where
    F: Fn() -> Result<Box<dyn Environment>, EnvError>,
{
    let mut a = make().or_else(|e| fail("construct", e.to_string()))?;
    let mut b = make().or_else(|e| fail("construct", e.to_string()))?;
    let spec = a.spec().clone();
    if spec.obs_dim == 0 || spec.act_dim == 0 || spec.max_steps == 0 {
        return fail("spec", format!("{spec:?}"));
    }
    if a.step(&vec![0.0; spec.act_dim]).is_ok() {
        return fail("reset precedes step", "step on a fresh instance succeeded");
    }
    let mut report = ConformanceReport::default();
    for &s in &opts.seeds {
        let ea = run_episode(a.as_mut(), s, opts.action_scale)?;
        let eb = run_episode(b.as_mut(), s, opts.action_scale)?;
        if !same_bits(&ea.initial, &eb.initial) {
            return fail("determinism", format!("seed {s}: initial observations differ"));
        }
        if ea.transitions.len() != eb.transitions.len() {
            return fail("determinism", format!("seed {s}: episode lengths {} vs {}", ea.transitions.len(), eb.transitions.len()));
        }
        for (i, (x, y)) in ea.transitions.iter().zip(&eb.transitions).enumerate() {
            if !same_bits(&x.obs, &y.obs) || x.reward.to_bits() != y.reward.to_bits() || x.done != y.done {
                return fail("determinism", format!("seed {s}: step {i} differs"));
            }
        }

        check_obs(&ea.initial, spec.obs_dim, spec.obs_bounds, &format!("seed {s} reset"))?;
        if ea.transitions.len() > spec.max_steps {
            return fail("episode length", format!("seed {s}: {} > {}", ea.transitions.len(), spec.max_steps));
        }
        let mut scored = 0usize;
        let mut crossings = 0;
        let mut total = 0.0;
        for (i, t) in ea.transitions.iter().enumerate() {
            check_obs(&t.obs, spec.obs_dim, spec.obs_bounds, &format!("seed {s} step {i}"))?;
            if !t.reward.is_finite() {
                return fail("reward finite", format!("seed {s} step {i}: {}", t.reward));
            }
            if t.done != (i + 1 == ea.transitions.len()) {
                return fail("absorbing done", format!("seed {s}: done flag at step {i}"));
            }
            if t.info.action_clamped {
                report.clamped_steps += 1;
            }
            if let (Some(n), Some(sec)) = (opts.sector_count, t.info.sector) {
                let expected = if sec == (scored + 1) % n {
                    scored = sec;
                    crossings += 1;
                    1.0
                } else {
                    0.0
                };
                if t.reward != expected {
                    return fail("reward conservation", format!("seed {s} step {i}: reward {} in sector {sec}", t.reward));
                }
            }
            total += t.reward;
        }
        // Done is absorbing until the next reset.
        for _ in 0..2 {
            if a.step(&vec![0.0; spec.act_dim]).is_ok() {
                return fail("absorbing done", format!("seed {s}: step after done accepted"));
            }
        }
        if a.step(&vec![0.0; spec.act_dim + 1]).is_ok() {
            return fail("action validation", "wrong-length action accepted");
        }
        let again = a.reset(s).or_else(|e| fail("reset", e.to_string()))?;
        if !same_bits(&again, &ea.initial) {
            return fail("determinism", format!("seed {s}: repeated reset differs"));
        }
        report.episodes += 1;
        report.steps += ea.transitions.len();
        report.total_reward += total;
        report.sector_crossings += crossings;
    }
    // A wrong-length action mid-episode is rejected without advancing.
    let first = a.reset(opts.seeds.first().copied().unwrap_or(0)).or_else(|e| fail("reset", e.to_string()))?;
    if a.step(&vec![0.0; spec.act_dim + 1]).is_ok() {
        return fail("action validation", "wrong-length action accepted mid-episode");
    }
    let mut c = make().or_else(|e| fail("construct", e.to_string()))?;
    c.reset(opts.seeds.first().copied().unwrap_or(0)).or_else(|e| fail("reset", e.to_string()))?;
    let zero = vec![0.0; spec.act_dim];
    let ta = a.step(&zero).or_else(|e| fail("step", e.to_string()))?;
    let tc = c.step(&zero).or_else(|e| fail("step", e.to_string()))?;
    if !same_bits(&ta.obs, &tc.obs) || first.len() != spec.obs_dim {
        return fail("action validation", "rejected action changed the environment state");
    }
    Ok(report)
}
