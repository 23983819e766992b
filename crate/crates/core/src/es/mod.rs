//! OpenAI-style evolution strategy: mirrored Gaussian perturbations,
//! centered-rank fitness shaping and an Adam step on the search gradient.
//!
//! Noise is never stored: perturbation `i` of generation `g` is regenerated
//! from `(seed, g, i / 2)` wherever it is needed.

mod eval;
mod norm;

pub use eval::{evaluate_population, EpisodeKey, EpisodeOutcome, EvalFailure, PopulationEval};
pub use norm::{Normalizer, RunningStat};

use rand_distr::{Distribution, StandardNormal};

use crate::nn::{AdamConfig, AdamState, NnError};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum EsError {
    #[error("invalid ES configuration: {0}")]
    Config(String),
    #[error("fitness of perturbation {index} is not a number")]
    NanFitness { index: usize },
    #[error("fitness of perturbation {index} is not finite ({value})")]
    NonFiniteFitness { index: usize, value: f64 },
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("search-gradient estimate is not finite; center left unchanged")]
    NonFiniteGradient,
    #[error("evaluation of perturbation {index} failed twice: {message}")]
    Evaluation { index: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    /// Population size; even, perturbations come in `+eps / -eps` pairs.
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub episodes_per_eval: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig { population: 40, sigma: 0.02, learning_rate: 0.01, weight_decay: 0.005, seed: 0, episodes_per_eval: 1 }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return Err(EsError::Config(format!("population must be even and at least 2, got {}", self.population)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EsError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EsError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(EsError::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.episodes_per_eval == 0 {
            return Err(EsError::Config("episodes per evaluation must be at least 1".into()));
        }
        Ok(())
    }

    /// Optimizer state for the center, stepping at the configured rate.
    pub fn adam(&self, dim: usize) -> AdamState {
        AdamState::new(dim, AdamConfig::with_stepsize(self.learning_rate))
    }
}

/// Perturbation `index` of `generation`, regenerated from the seed alone.
pub fn perturbation(config: &EsConfig, generation: u64, index: usize, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(config.seed, &[seed::tag("es-noise"), generation, (index / 2) as u64]);
    let mut eps: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    if index % 2 == 1 {
        eps.iter_mut().for_each(|v| *v = -*v);
    }
    eps
}

/// `population / 2` standard-normal draws, each followed by its negation.
pub fn sample_perturbations(config: &EsConfig, generation: u64, dim: usize) -> Result<Vec<Vec<f64>>, EsError> {
    config.validate()?;
    if dim == 0 {
        return Err(EsError::Config("parameter dimension must be positive".into()));
    }
    let mut out = Vec::with_capacity(config.population);
    for pair in 0..config.population / 2 {
        let eps = perturbation(config, generation, 2 * pair, dim);
        let neg = eps.iter().map(|v| -v).collect();
        out.push(eps);
        out.push(neg);
    }
    Ok(out)
}

/// Centered ranks: `u_i = rank_i / (n - 1) - 0.5` with ascending ranks from 0
/// and ties broken by index.
pub fn centered_rank_shape(fitness: &[f64]) -> Result<Vec<f64>, EsError> {
    let n = fitness.len();
    if n < 2 {
        return Err(EsError::Config(format!("need at least 2 fitness values, got {n}")));
    }
    for (index, &value) in fitness.iter().enumerate() {
        if value.is_nan() {
            return Err(EsError::NanFitness { index });
        }
        if !value.is_finite() {
            return Err(EsError::NonFiniteFitness { index, value });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
    let mut utilities = vec![0.0; n];
    let denom = (n - 1) as f64;
    for (rank, &idx) in order.iter().enumerate() {
        utilities[idx] = rank as f64 / denom - 0.5;
    }
    Ok(utilities)
}

/// Search-gradient estimate `1/(n sigma) * sum_i u_i eps_i`, summed in index order.
pub fn gradient_estimate(perturbations: &[Vec<f64>], utilities: &[f64], sigma: f64) -> Result<Vec<f64>, EsError> {
    if perturbations.len() != utilities.len() {
        return Err(EsError::Dimension { what: "utilities", expected: perturbations.len(), got: utilities.len() });
    }
    let dim = perturbations.first().map_or(0, Vec::len);
    let mut g = vec![0.0; dim];
    for (eps, &u) in perturbations.iter().zip(utilities) {
        if eps.len() != dim {
            return Err(EsError::Dimension { what: "perturbation", expected: dim, got: eps.len() });
        }
        for (gj, ej) in g.iter_mut().zip(eps) {
            *gj += u * ej;
        }
    }
    let scale = 1.0 / (perturbations.len() as f64 * sigma);
    g.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

/// Moves the center uphill: Adam on `-g`, then decoupled weight decay.
/// Returns the gradient estimate. On error the center and optimizer are unchanged.
pub fn es_step(
    center: &mut [f64],
    perturbations: &[Vec<f64>],
    utilities: &[f64],
    config: &EsConfig,
    adam: &mut AdamState,
) -> Result<Vec<f64>, EsError> {
    let g = gradient_estimate(perturbations, utilities, config.sigma)?;
    if g.len() != center.len() {
        return Err(EsError::Dimension { what: "center", expected: g.len(), got: center.len() });
    }
    if !g.iter().all(|v| v.is_finite()) {
        return Err(EsError::NonFiniteGradient);
    }
    let descent: Vec<f64> = g.iter().map(|v| -v).collect();
    let before = adam.clone();
    let saved = center.to_vec();
    adam.update(center, &descent, config.weight_decay)?;
    if !center.iter().all(|v| v.is_finite()) {
        center.copy_from_slice(&saved);
        *adam = before;
        return Err(EsError::NonFiniteGradient);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_example() {
        let u = centered_rank_shape(&[3.0, 1.0, 2.0, 0.0]).unwrap();
        let expected = [0.5, -1.0 / 6.0, 1.0 / 6.0, -0.5];
        for (a, b) in u.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_broken_by_index() {
        let u = centered_rank_shape(&[1.0; 4]).unwrap();
        assert_eq!(u, vec![-0.5, -0.5 + 1.0 / 3.0, -0.5 + 2.0 / 3.0, 0.5]);
        assert!(u.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn nan_fitness_reports_index() {
        match centered_rank_shape(&[0.0, 1.0, f64::NAN]) {
            Err(EsError::NanFitness { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn odd_population_rejected() {
        let cfg = EsConfig { population: 5, ..EsConfig::default() };
        assert!(sample_perturbations(&cfg, 0, 3).is_err());
        let cfg = EsConfig { sigma: 0.0, ..EsConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mirrored_pairs_sum_to_zero() {
        let cfg = EsConfig { population: 2, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, 3, 7).unwrap();
        for (a, b) in p[0].iter().zip(&p[1]) {
            assert_eq!(a + b, 0.0);
        }
        let cfg = EsConfig { population: 40, seed: 99, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, 1, 13).unwrap();
        for j in 0..13 {
            let s: f64 = p.iter().map(|e| e[j]).sum();
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn single_vector_regeneration_matches_population() {
        let cfg = EsConfig { population: 6, seed: 4, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, 2, 5).unwrap();
        for (i, eps) in p.iter().enumerate() {
            assert_eq!(&perturbation(&cfg, 2, i, 5), eps);
        }
    }

    #[test]
    fn zero_utilities_leave_center() {
        let cfg = EsConfig { weight_decay: 0.0, population: 4, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, 0, 3).unwrap();
        let mut center = vec![0.2, -0.1, 0.4];
        let mut adam = cfg.adam(3);
        es_step(&mut center, &p, &[0.0; 4], &cfg, &mut adam).unwrap();
        assert_eq!(center, vec![0.2, -0.1, 0.4]);
    }

    #[test]
    fn mirrored_pair_moves_toward_better_side() {
        let cfg = EsConfig { population: 2, weight_decay: 0.0, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, 0, 4).unwrap();
        // f(+eps) > f(-eps)
        let u = centered_rank_shape(&[1.0, 0.0]).unwrap();
        let mut center = vec![0.0; 4];
        let mut adam = cfg.adam(4);
        es_step(&mut center, &p, &u, &cfg, &mut adam).unwrap();
        let d: f64 = center.iter().zip(&p[0]).map(|(c, e)| c * e).sum();
        assert!(d > 0.0);
    }
}
