//! Environments behind one episodic interface: a lidar racecar on a sectored
//! track, a pendulum swing-up, a trivial echo task, and bridged external
//! processes (see [`crate::bridge`]).

pub mod conformance;
mod echo;
mod racecar;
mod swingup;
pub mod track;

use std::sync::Arc;
use std::time::Duration;

pub use echo::{EchoConfig, EchoEnv};
pub use racecar::{LidarRacecar, Pose, RacecarConfig};
pub use swingup::{SwingUp, SwingUpConfig};
pub use track::{default_track, generate_track, Track, TrackError, TrackParams};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode ended; reset first")]
    EpisodeDone,
    #[error("action has {got} components, expected {expected}")]
    ActionDimension { expected: usize, got: usize },
    #[error("action component {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("episode marked failed after an earlier transport error")]
    Failed,
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
    pub episodes_per_eval: usize,
    /// Documented per-component observation bounds, when the task has them.
    pub obs_bounds: Option<(f64, f64)>,
}

impl EnvSpec {
    pub fn new(obs_dim: usize, act_dim: usize, max_steps: usize) -> Result<Self, EnvError> {
        if obs_dim == 0 || act_dim == 0 || max_steps == 0 {
            return Err(EnvError::Config(format!(
                "dimensions and max steps must be positive (obs {obs_dim}, act {act_dim}, steps {max_steps})"
            )));
        }
        Ok(EnvSpec {
            obs_dim,
            act_dim,
            action_low: vec![-1.0; act_dim],
            action_high: vec![1.0; act_dim],
            max_steps,
            episodes_per_eval: 1,
            obs_bounds: None,
        })
    }

    /// Validates length and finiteness, then clamps into the declared range.
    /// The flag is set when any component was outside it.
    pub fn clamp_action(&self, action: &[f64]) -> Result<(Vec<f64>, bool), EnvError> {
        if action.len() != self.act_dim {
            return Err(EnvError::ActionDimension { expected: self.act_dim, got: action.len() });
        }
        let mut clamped = false;
        let mut out = Vec::with_capacity(action.len());
        for (index, ((&a, &lo), &hi)) in action.iter().zip(&self.action_low).zip(&self.action_high).enumerate() {
            if !a.is_finite() {
                return Err(EnvError::NonFiniteAction { index });
            }
            let c = a.clamp(lo, hi);
            clamped |= c != a;
            out.push(c);
        }
        Ok((out, clamped))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub action_clamped: bool,
    /// Round-trip time for bridged environments.
    pub latency: Option<Duration>,
    /// Racecar sector after the step.
    pub sector: Option<usize>,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode from the seeded initial distribution.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError>;
    fn name(&self) -> String;
}

/// Episode bookkeeping shared by the built-in tasks.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    pub steps: usize,
    pub active: bool,
    pub done: bool,
}

impl EpisodeClock {
    pub fn start(&mut self) {
        *self = EpisodeClock { steps: 0, active: true, done: false };
    }

    pub fn check(&self) -> Result<(), EnvError> {
        if !self.active {
            Err(EnvError::NotReset)
        } else if self.done {
            Err(EnvError::EpisodeDone)
        } else {
            Ok(())
        }
    }

    /// Counts a step; returns `true` when the step cap is reached.
    pub fn tick(&mut self, max_steps: usize) -> bool {
        self.steps += 1;
        self.steps >= max_steps
    }
}

/// Recipe for building fresh environment instances, one per worker.
#[derive(Debug, Clone)]
pub enum EnvSource {
    Racecar { config: RacecarConfig, track: Arc<Track> },
    SwingUp(SwingUpConfig),
    Echo(EchoConfig),
    Bridge { endpoint: String, timeout: Duration },
}

impl EnvSource {
    pub fn racecar(config: RacecarConfig) -> Result<Self, EnvError> {
        let track = Arc::new(default_track(config.track_seed)?);
        Ok(EnvSource::Racecar { config, track })
    }

    /// Parses `racecar`, `swingup`, `echo` or a bridge endpoint
    /// (`cmd:<command line>` or `tcp:<host:port>`).
    pub fn parse(name: &str, max_steps: Option<usize>) -> Result<Self, EnvError> {
        match name {
            "racecar" => {
                let mut c = RacecarConfig::default();
                if let Some(m) = max_steps {
                    c.max_steps = m;
                }
                Self::racecar(c)
            }
            "swingup" => {
                let mut c = SwingUpConfig::default();
                if let Some(m) = max_steps {
                    c.max_steps = m;
                }
                Ok(EnvSource::SwingUp(c))
            }
            "echo" => {
                let mut c = EchoConfig::default();
                if let Some(m) = max_steps {
                    c.max_steps = m;
                }
                Ok(EnvSource::Echo(c))
            }
            other if other.starts_with("cmd:") || other.starts_with("tcp:") => {
                Ok(EnvSource::Bridge { endpoint: other.to_string(), timeout: crate::bridge::DEFAULT_TIMEOUT })
            }
            other => Err(EnvError::Config(format!(
                "unknown environment {other:?}; expected racecar, swingup, echo, cmd:<command> or tcp:<addr>"
            ))),
        }
    }

    pub fn make(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self {
            EnvSource::Racecar { config, track } => Box::new(LidarRacecar::new(config.clone(), track.clone())?),
            EnvSource::SwingUp(c) => Box::new(SwingUp::new(c.clone())?),
            EnvSource::Echo(c) => Box::new(EchoEnv::new(c.clone())?),
            EnvSource::Bridge { endpoint, timeout } => Box::new(crate::bridge::BridgeEnv::connect_with_timeout(endpoint, *timeout)?),
        })
    }

    pub fn label(&self) -> String {
        match self {
            EnvSource::Racecar { config, .. } => format!("racecar(track_seed={})", config.track_seed),
            EnvSource::SwingUp(_) => "swingup".into(),
            EnvSource::Echo(_) => "echo".into(),
            EnvSource::Bridge { endpoint, .. } => endpoint.clone(),
        }
    }
}
