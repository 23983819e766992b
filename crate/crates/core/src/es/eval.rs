use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{EsConfig, EsError};
use crate::seed;

/// Identifies one evaluation episode of one perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeKey {
    pub generation: u64,
    pub index: usize,
    pub episode: usize,
    /// `mix(master, generation, index, episode)`, handed to the environment.
    pub seed: u64,
}

impl EpisodeKey {
    pub fn new(config: &EsConfig, generation: u64, index: usize, episode: usize) -> Self {
        let seed = seed::mix(config.seed, &[seed::tag("es-episode"), generation, index as u64, episode as u64]);
        EpisodeKey { generation, index, episode, seed }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome<A> {
    pub score: f64,
    pub steps: u64,
    pub aux: A,
}

pub type EvalFailure = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone)]
pub struct PopulationEval<A> {
    /// Mean episode score per perturbation, in index order.
    pub fitness: Vec<f64>,
    pub steps: u64,
    /// Per-perturbation, per-episode payloads, in index order.
    pub aux: Vec<Vec<A>>,
}

struct Evaluated<A> {
    fitness: f64,
    steps: u64,
    aux: Vec<A>,
}

fn evaluate_one<W, A, F>(
    worker: &mut W,
    center: &[f64],
    eps: &[f64],
    config: &EsConfig,
    generation: u64,
    index: usize,
    eval: &F,
) -> Result<Evaluated<A>, EsError>
where
    F: Fn(&mut W, &[f64], EpisodeKey) -> Result<EpisodeOutcome<A>, EvalFailure>,
{
    let theta: Vec<f64> = center.iter().zip(eps).map(|(c, e)| c + config.sigma * e).collect();
    let mut total = 0.0;
    let mut steps = 0;
    let mut aux = Vec::with_capacity(config.episodes_per_eval);
    for episode in 0..config.episodes_per_eval {
        let key = EpisodeKey::new(config, generation, index, episode);
        let outcome = match eval(worker, &theta, key) {
            Ok(o) => o,
            Err(first) => {
                log::warn!("perturbation {index} episode {episode} failed ({first}); retrying once");
                eval(worker, &theta, key).map_err(|e| EsError::Evaluation { index, message: e.to_string() })?
            }
        };
        total += outcome.score;
        steps += outcome.steps;
        aux.push(outcome.aux);
    }
    Ok(Evaluated { fitness: total / config.episodes_per_eval as f64, steps, aux })
}

/// Fitness of `center + sigma * eps_i` for every perturbation, averaged over
/// the configured episode count.
///
/// Each element of `workers` is private state owned by one thread (typically
/// an environment instance). Perturbations are handed out dynamically, but
/// results are collected by index, so the output does not depend on the
/// number of workers as long as `eval` is a pure function of its key.
pub fn evaluate_population<W, A, F>(
    workers: &mut [W],
    center: &[f64],
    perturbations: &[Vec<f64>],
    config: &EsConfig,
    generation: u64,
    eval: F,
) -> Result<PopulationEval<A>, EsError>
where
    W: Send,
    A: Send,
    F: Fn(&mut W, &[f64], EpisodeKey) -> Result<EpisodeOutcome<A>, EvalFailure> + Sync,
{
    config.validate()?;
    if workers.is_empty() {
        return Err(EsError::Config("at least one evaluation worker is required".into()));
    }
    for eps in perturbations {
        if eps.len() != center.len() {
            return Err(EsError::Dimension { what: "perturbation", expected: center.len(), got: eps.len() });
        }
    }
    let n = perturbations.len();
    let mut slots: Vec<Option<Result<Evaluated<A>, EsError>>> = (0..n).map(|_| None).collect();

    if workers.len() == 1 || n <= 1 {
        let worker = &mut workers[0];
        for (i, eps) in perturbations.iter().enumerate() {
            let r = evaluate_one(worker, center, eps, config, generation, i, &eval);
            let failed = r.is_err();
            slots[i] = Some(r);
            if failed {
                break;
            }
        }
    } else {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let shared = Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for worker in workers.iter_mut() {
                let (next, abort, shared, eval) = (&next, &abort, &shared, &eval);
                scope.spawn(move || loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = evaluate_one(worker, center, &perturbations[i], config, generation, i, eval);
                    if r.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    shared.lock().expect("result slots poisoned")[i] = Some(r);
                });
            }
        });
    }

    let mut fitness = Vec::with_capacity(n);
    let mut aux = Vec::with_capacity(n);
    let mut steps = 0;
    let mut first_error = None;
    for slot in slots {
        match slot {
            Some(Ok(e)) => {
                fitness.push(e.fitness);
                aux.push(e.aux);
                steps += e.steps;
            }
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if fitness.len() != n {
        return Err(EsError::Config("evaluation aborted before completion".into()));
    }
    Ok(PopulationEval { fitness, steps, aux })
}
