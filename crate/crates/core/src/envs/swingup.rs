use rand::Rng;

use super::{EnvError, EnvSpec, Environment, EpisodeClock, StepInfo, Transition};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SwingUpConfig {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Initial angle and velocity are drawn from `[-jitter, jitter]`.
    pub jitter: f64,
}

impl Default for SwingUpConfig {
    fn default() -> Self {
        SwingUpConfig {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
            max_torque: 2.0,
            max_speed: 8.0,
            dt: 0.05,
            max_steps: 1000,
            jitter: 0.2,
        }
    }
}

/// Damped pendulum hanging down at `theta = 0`; reward `(1 - cos theta) / 2`
/// per step, so 1 is upright.
#[derive(Debug, Clone)]
pub struct SwingUp {
    config: SwingUpConfig,
    spec: EnvSpec,
    theta: f64,
    omega: f64,
    clock: EpisodeClock,
}

impl SwingUp {
    pub fn new(config: SwingUpConfig) -> Result<Self, EnvError> {
        if !(config.mass > 0.0 && config.length > 0.0 && config.max_speed > 0.0 && config.dt > 0.0) {
            return Err(EnvError::Config("swing-up constants must be positive".into()));
        }
        let mut spec = EnvSpec::new(3, 1, config.max_steps)?;
        spec.obs_bounds = Some((-1.0, 1.0));
        Ok(SwingUp { config, spec, theta: 0.0, omega: 0.0, clock: EpisodeClock::default() })
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.omega)
    }

    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = theta;
        self.omega = omega.clamp(-self.config.max_speed, self.config.max_speed);
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.sin(), self.theta.cos(), self.omega / self.config.max_speed]
    }
}

impl Environment for SwingUp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed_value: u64) -> Result<Vec<f64>, EnvError> {
        let mut rng = seed::rng(seed_value, &[seed::tag("swingup-start")]);
        let j = self.config.jitter;
        self.theta = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        self.omega = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        self.clock.start();
        Ok(self.observe())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        self.clock.check()?;
        let (a, clamped) = self.spec.clamp_action(action)?;
        let c = &self.config;
        let inertia = c.mass * c.length * c.length;
        let torque = a[0] * c.max_torque;
        let alpha = (torque - c.damping * self.omega - c.mass * c.gravity * c.length * self.theta.sin()) / inertia;
        self.omega = (self.omega + alpha * c.dt).clamp(-c.max_speed, c.max_speed);
        self.theta += self.omega * c.dt;
        let reward = (1.0 - self.theta.cos()) / 2.0;
        let done = self.clock.tick(self.spec.max_steps);
        self.clock.done = done;
        Ok(Transition { obs: self.observe(), reward, done, info: StepInfo { action_clamped: clamped, ..StepInfo::default() } })
    }

    fn name(&self) -> String {
        "swingup".into()
    }
}
