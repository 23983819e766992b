use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::track::Track;
use super::{EnvError, EnvSpec, Environment, EpisodeClock, StepInfo, Transition};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct RacecarConfig {
    pub track_seed: u64,
    pub max_steps: usize,
    pub rays: usize,
    pub fov_deg: f64,
    pub lidar_range: f64,
    /// Standard deviation of additive Gaussian lidar noise (normalized units).
    pub lidar_noise: f64,
    pub dt: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_speed: f64,
    pub stuck_distance: f64,
    pub stuck_steps: usize,
    /// Start position along sector 0, as a fraction of its length.
    pub start_fraction: f64,
    pub start_lateral: f64,
    pub start_heading: f64,
}

impl Default for RacecarConfig {
    fn default() -> Self {
        RacecarConfig {
            track_seed: 0,
            max_steps: 10_000,
            rays: 30,
            fov_deg: 270.0,
            lidar_range: 5.0,
            lidar_noise: 0.0,
            dt: 0.05,
            wheelbase: 0.33,
            max_steer: 0.4,
            max_accel: 4.0,
            max_speed: 3.0,
            stuck_distance: 0.01,
            stuck_steps: 100,
            start_fraction: 0.25,
            start_lateral: 0.2,
            start_heading: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Kinematic-bicycle car with a frontal lidar fan. Reward 1 for each entry
/// into the next sector forward; hitting a wall stops the car in place.
#[derive(Debug, Clone)]
pub struct LidarRacecar {
    config: RacecarConfig,
    spec: EnvSpec,
    track: Arc<Track>,
    ray_angles: Vec<f64>,
    pose: Pose,
    speed: f64,
    quad: usize,
    last_scored: usize,
    stuck: usize,
    reward_total: f64,
    clock: EpisodeClock,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
}

impl LidarRacecar {
    pub fn new(config: RacecarConfig, track: Arc<Track>) -> Result<Self, EnvError> {
        if config.rays == 0 {
            return Err(EnvError::Config("racecar needs at least one lidar ray".into()));
        }
        if !(config.lidar_range > 0.0) || config.lidar_range > track.max_range() + 1e-12 {
            return Err(EnvError::Config(format!("lidar range {} must be in (0, {}]", config.lidar_range, track.max_range())));
        }
        if !(config.lidar_noise >= 0.0) {
            return Err(EnvError::Config("lidar noise must be non-negative".into()));
        }
        let step_len = config.max_speed * config.dt;
        let min_sector = track.min_boundary_sector_length();
        if step_len >= min_sector {
            return Err(EnvError::Config(format!(
                "max speed covers {step_len} m per step, not below the shortest sector edge {min_sector} m"
            )));
        }
        let mut spec = EnvSpec::new(config.rays, 2, config.max_steps)?;
        spec.obs_bounds = Some((0.0, 1.0));
        let half = config.fov_deg.to_radians() / 2.0;
        let ray_angles = if config.rays == 1 {
            vec![0.0]
        } else {
            (0..config.rays).map(|i| -half + 2.0 * half * i as f64 / (config.rays - 1) as f64).collect()
        };
        Ok(LidarRacecar {
            config,
            spec,
            track,
            ray_angles,
            pose: Pose { x: 0.0, y: 0.0, heading: 0.0 },
            speed: 0.0,
            quad: 0,
            last_scored: 0,
            stuck: 0,
            reward_total: 0.0,
            clock: EpisodeClock::default(),
            noise: None,
        })
    }

    pub fn track(&self) -> &Arc<Track> {
        &self.track
    }

    pub fn config(&self) -> &RacecarConfig {
        &self.config
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn sector(&self) -> usize {
        self.track.sector_of_quad(self.quad)
    }

    pub fn reward_so_far(&self) -> f64 {
        self.reward_total
    }

    pub fn ray_angles(&self) -> &[f64] {
        &self.ray_angles
    }

    /// Places the car at `pose` with `speed`, keeping episode counters.
    pub fn set_state(&mut self, pose: Pose, speed: f64) -> Result<(), EnvError> {
        let q = self.track.locate([pose.x, pose.y], Some(self.quad)).ok_or_else(|| EnvError::Config("pose outside the corridor".into()))?;
        self.pose = pose;
        self.speed = speed.clamp(0.0, self.config.max_speed);
        self.quad = q;
        Ok(())
    }

    pub fn scan(&mut self) -> Vec<f64> {
        let origin = [self.pose.x, self.pose.y];
        let mut out: Vec<f64> = self
            .ray_angles
            .iter()
            .map(|a| self.track.raycast_from_quad(self.quad, origin, self.pose.heading + a, self.config.lidar_range))
            .collect();
        if let Some((rng, dist)) = &mut self.noise {
            for v in &mut out {
                *v = (*v + dist.sample(rng)).clamp(0.0, 1.0);
            }
        }
        out
    }
}

impl Environment for LidarRacecar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed_value: u64) -> Result<Vec<f64>, EnvError> {
        let mut rng = seed::rng(seed_value, &[seed::tag("racecar-start")]);
        let lateral = rng.gen_range(-self.config.start_lateral..=self.config.start_lateral);
        let dheading = rng.gen_range(-self.config.start_heading..=self.config.start_heading);
        let s = self.config.start_fraction * self.track.sector_lengths()[0];
        let (p, t) = self.track.point_at(s);
        let normal = [-t[1], t[0]];
        self.pose = Pose { x: p[0] + lateral * normal[0], y: p[1] + lateral * normal[1], heading: t[1].atan2(t[0]) + dheading };
        self.quad = self
            .track
            .locate([self.pose.x, self.pose.y], Some(0))
            .ok_or_else(|| EnvError::Config("start pose outside the corridor".into()))?;
        self.speed = 0.0;
        self.last_scored = self.track.sector_of_quad(self.quad);
        self.stuck = 0;
        self.reward_total = 0.0;
        self.noise = if self.config.lidar_noise > 0.0 {
            let dist = Normal::new(0.0, self.config.lidar_noise).map_err(|e| EnvError::Config(e.to_string()))?;
            Some((seed::rng(seed_value, &[seed::tag("racecar-lidar")]), dist))
        } else {
            None
        };
        self.clock.start();
        Ok(self.scan())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        self.clock.check()?;
        let (a, clamped) = self.spec.clamp_action(action)?;
        let c = &self.config;
        let steer = a[0] * c.max_steer;
        let speed = (self.speed + a[1] * c.max_accel * c.dt).clamp(0.0, c.max_speed);
        let heading = self.pose.heading + speed / c.wheelbase * steer.tan() * c.dt;
        let next = [self.pose.x + speed * heading.cos() * c.dt, self.pose.y + speed * heading.sin() * c.dt];
        let mut collided = false;
        let displacement = match self.track.locate(next, Some(self.quad)) {
            Some(q) => {
                let d = ((next[0] - self.pose.x).powi(2) + (next[1] - self.pose.y).powi(2)).sqrt();
                self.pose = Pose { x: next[0], y: next[1], heading };
                self.speed = speed;
                self.quad = q;
                d
            }
            None => {
                collided = true;
                self.speed = 0.0;
                0.0
            }
        };
        self.stuck = if displacement < c.stuck_distance { self.stuck + 1 } else { 0 };
        let sector = self.track.sector_of_quad(self.quad);
        let mut reward = 0.0;
        if sector == (self.last_scored + 1) % self.track.sector_count() {
            reward = 1.0;
            self.last_scored = sector;
            self.reward_total += 1.0;
        }
        let capped = self.clock.tick(self.spec.max_steps);
        let done = capped || self.stuck >= self.config.stuck_steps;
        self.clock.done = done;
        Ok(Transition {
            obs: self.scan(),
            reward,
            done,
            info: StepInfo { action_clamped: clamped, latency: None, sector: Some(sector), collided },
        })
    }

    fn name(&self) -> String {
        "racecar".into()
    }
}
