use super::{EnvError, EnvSpec, Environment, EpisodeClock, StepInfo, Transition};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct EchoConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_steps: usize,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig { obs_dim: 22, act_dim: 6, max_steps: 1000 }
    }
}

/// Observation is the previous (clamped) action, zero-padded or truncated to
/// `obs_dim`; reward is the mean action component. The first observation
/// carries a seed-dependent value in component 0.
#[derive(Debug, Clone)]
pub struct EchoEnv {
    spec: EnvSpec,
    clock: EpisodeClock,
}

impl EchoEnv {
    pub fn new(config: EchoConfig) -> Result<Self, EnvError> {
        let mut spec = EnvSpec::new(config.obs_dim, config.act_dim, config.max_steps)?;
        spec.obs_bounds = Some((-1.0, 1.0));
        Ok(EchoEnv { spec, clock: EpisodeClock::default() })
    }

    fn echo(&self, action: &[f64]) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.obs_dim];
        for (o, a) in obs.iter_mut().zip(action) {
            *o = *a;
        }
        obs
    }
}

impl Environment for EchoEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed_value: u64) -> Result<Vec<f64>, EnvError> {
        self.clock.start();
        let mut obs = vec![0.0; self.spec.obs_dim];
        obs[0] = (seed::mix(seed_value, &[seed::tag("echo")]) % 2001) as f64 / 1000.0 - 1.0;
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        self.clock.check()?;
        let (a, clamped) = self.spec.clamp_action(action)?;
        let reward = a.iter().sum::<f64>() / a.len() as f64;
        let done = self.clock.tick(self.spec.max_steps);
        self.clock.done = done;
        Ok(Transition { obs: self.echo(&a), reward, done, info: StepInfo { action_clamped: clamped, ..StepInfo::default() } })
    }

    fn name(&self) -> String {
        "echo".into()
    }
}
