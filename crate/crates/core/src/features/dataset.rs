use std::collections::VecDeque;

use rand::Rng;

use super::FeatureError;
use crate::envs::Environment;
use crate::seed;

/// Consecutive `(observation, action)` pairs of one episode; `obs[t]` was
/// observed before `actions[t]` was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl EpisodeRecord {
    pub fn new() -> Self {
        EpisodeRecord { obs: Vec::new(), actions: Vec::new() }
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>) {
        self.obs.push(obs);
        self.actions.push(action);
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Keeps only the last `n` steps.
    fn keep_last(&mut self, n: usize) {
        let drop = self.len().saturating_sub(n);
        self.obs.drain(..drop);
        self.actions.drain(..drop);
    }
}

impl Default for EpisodeRecord {
    fn default() -> Self {
        Self::new()
    }
}

/// Whole-episode FIFO buffer bounded by a step capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    steps: usize,
}

/// Outcome of one replacement round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replacement {
    pub evicted_steps: usize,
    pub evicted_episodes: usize,
    pub added_steps: usize,
    pub truncated: bool,
}

const MAGIC: &[u8; 4] = b"FVDS";
const VERSION: u8 = 1;

impl Dataset {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        Dataset { obs_dim, act_dim, capacity, episodes: VecDeque::new(), steps: 0 }
    }

    /// Dataset holding exactly `episodes`, with capacity equal to their size.
    pub fn from_episodes(obs_dim: usize, act_dim: usize, episodes: Vec<EpisodeRecord>) -> Result<Self, FeatureError> {
        let total = episodes.iter().map(EpisodeRecord::len).sum();
        let mut ds = Dataset::new(obs_dim, act_dim, total);
        for e in episodes {
            ds.validate(&e)?;
            ds.steps += e.len();
            ds.episodes.push_back(e);
        }
        Ok(ds)
    }

    fn validate(&self, e: &EpisodeRecord) -> Result<(), FeatureError> {
        if e.is_empty() || e.obs.len() != e.actions.len() {
            return Err(FeatureError::Data("episodes need at least one step and one action per observation".into()));
        }
        if e.obs.iter().any(|o| o.len() != self.obs_dim) || e.actions.iter().any(|a| a.len() != self.act_dim) {
            return Err(FeatureError::Data(format!("episode dimensions differ from dataset ({} obs, {} act)", self.obs_dim, self.act_dim)));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_steps(&self) -> usize {
        self.steps
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Evicts oldest whole episodes until at least `ceil(fraction * capacity)`
    /// steps are freed and the fresh episodes fit, then appends them. Fresh
    /// data larger than the capacity is cut to its newest capacity-worth.
    pub fn replace_oldest(&mut self, fresh: Vec<EpisodeRecord>, fraction: f64) -> Result<Replacement, FeatureError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(FeatureError::Config(format!("replacement fraction must be in (0, 1], got {fraction}")));
        }
        for e in &fresh {
            self.validate(e)?;
        }
        let mut fresh: VecDeque<EpisodeRecord> = fresh.into();
        let mut fresh_steps: usize = fresh.iter().map(EpisodeRecord::len).sum();
        let mut truncated = false;
        if fresh_steps > self.capacity {
            log::warn!("fresh data ({fresh_steps} steps) exceeds dataset capacity ({}); keeping the newest steps", self.capacity);
            truncated = true;
            while fresh_steps > self.capacity {
                let excess = fresh_steps - self.capacity;
                let first = fresh.front_mut().expect("non-empty while over capacity");
                if first.len() <= excess {
                    fresh_steps -= first.len();
                    fresh.pop_front();
                } else {
                    let keep = first.len() - excess;
                    first.keep_last(keep);
                    fresh_steps -= excess;
                }
            }
        }
        let need = (fraction * self.capacity as f64).ceil() as usize;
        let mut evicted_steps = 0;
        let mut evicted_episodes = 0;
        while !self.episodes.is_empty() && (evicted_steps < need || self.steps + fresh_steps > self.capacity) {
            let e = self.episodes.pop_front().unwrap();
            evicted_steps += e.len();
            evicted_episodes += 1;
            self.steps -= e.len();
        }
        self.steps += fresh_steps;
        self.episodes.extend(fresh);
        debug_assert!(self.steps <= self.capacity);
        Ok(Replacement { evicted_steps, evicted_episodes, added_steps: fresh_steps, truncated })
    }

    /// Mean of every observation component over the stored steps.
    pub fn observation_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.obs_dim];
        for e in &self.episodes {
            for o in &e.obs {
                for (a, b) in m.iter_mut().zip(o) {
                    *a += b;
                }
            }
        }
        m.iter_mut().for_each(|v| *v /= self.steps.max(1) as f64);
        m
    }

    /// Versioned little-endian encoding: header, then length-prefixed episodes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.steps * (self.obs_dim + self.act_dim) * 8);
        self.write_into(&mut out);
        out
    }

    pub(crate) fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.act_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.capacity as u64).to_le_bytes());
        out.extend_from_slice(&(self.episodes.len() as u64).to_le_bytes());
        for e in &self.episodes {
            out.extend_from_slice(&(e.len() as u64).to_le_bytes());
            for (o, a) in e.obs.iter().zip(&e.actions) {
                for v in o.iter().chain(a) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut cursor = bytes;
        let ds = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(FeatureError::Format(format!("{} trailing bytes after dataset", cursor.len())));
        }
        Ok(ds)
    }

    pub(crate) fn read_from(cursor: &mut &[u8]) -> Result<Self, FeatureError> {
        fn take<'a>(c: &mut &'a [u8], n: usize) -> Result<&'a [u8], FeatureError> {
            if c.len() < n {
                return Err(FeatureError::Format("unexpected end of dataset data".into()));
            }
            let (h, t) = c.split_at(n);
            *c = t;
            Ok(h)
        }
        let u32_at = |c: &mut &[u8]| -> Result<usize, FeatureError> { Ok(u32::from_le_bytes(take(c, 4)?.try_into().unwrap()) as usize) };
        let u64_at = |c: &mut &[u8]| -> Result<usize, FeatureError> { Ok(u64::from_le_bytes(take(c, 8)?.try_into().unwrap()) as usize) };
        if take(cursor, 4)? != MAGIC {
            return Err(FeatureError::Format("not a dataset file".into()));
        }
        let version = take(cursor, 1)?[0];
        if version != VERSION {
            return Err(FeatureError::Format(format!("dataset version {version}, expected {VERSION}")));
        }
        let obs_dim = u32_at(cursor)?;
        let act_dim = u32_at(cursor)?;
        let capacity = u64_at(cursor)?;
        let n = u64_at(cursor)?;
        let mut ds = Dataset::new(obs_dim, act_dim, capacity);
        for _ in 0..n {
            let len = u64_at(cursor)?;
            let row = obs_dim + act_dim;
            let raw = take(cursor, len.checked_mul(row * 8).ok_or_else(|| FeatureError::Format("overflow".into()))?)?;
            let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let mut e = EpisodeRecord::new();
            for step in vals.chunks_exact(row) {
                e.push(step[..obs_dim].to_vec(), step[obs_dim..].to_vec());
            }
            ds.validate(&e)?;
            ds.steps += e.len();
            ds.episodes.push_back(e);
        }
        if ds.steps > ds.capacity {
            return Err(FeatureError::Format(format!("{} steps exceed capacity {}", ds.steps, ds.capacity)));
        }
        Ok(ds)
    }

    /// SHA-256 of the encoding, for reproducibility checks.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `episodes` episodes of uniformly random actions. Episode `e` is reset with
/// `mix(seed, e)`; the capacity is the resulting step count.
pub fn collect_random_dataset(env: &mut dyn Environment, episodes: usize, seed_value: u64) -> Result<Dataset, FeatureError> {
    if episodes == 0 {
        return Err(FeatureError::Config("need at least one episode".into()));
    }
    let spec = env.spec().clone();
    let mut records = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = seed::rng(seed_value, &[seed::tag("collect-actions"), e as u64]);
        let mut obs = env.reset(seed::mix(seed_value, &[seed::tag("collect-episode"), e as u64]))?;
        let mut rec = EpisodeRecord::new();
        loop {
            let action: Vec<f64> = spec.action_low.iter().zip(&spec.action_high).map(|(&lo, &hi)| rng.gen_range(lo..=hi)).collect();
            let t = env.step(&action)?;
            rec.push(std::mem::replace(&mut obs, t.obs), action);
            if t.done {
                break;
            }
        }
        records.push(rec);
    }
    Dataset::from_episodes(spec.obs_dim, spec.act_dim, records)
}
