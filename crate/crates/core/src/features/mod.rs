//! Feature extractors that sit between observations and the policy: identity
//! pass-through, autoencoder, autoencoder plus LSTM forward model, and the
//! reconstructive and predictive sequence-to-sequence encoders. Also the
//! self-supervision dataset and its training loops.

mod dataset;
mod models;
mod train;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub use dataset::{collect_random_dataset, Dataset, EpisodeRecord, Replacement};
pub use models::{Autoencoder, ForwardModel, Seq2Seq};
pub use train::{continual_update, measure_mse, pretrain, ContinualConfig, MseReport, TrainConfig, TrainReport};

use crate::envs::EnvError;
use crate::nn::{read_params, write_params, AdamState, LstmState, NnError, ParameterVector};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("extract called out of order: {0}")]
    OutOfOrder(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Observations go straight to the policy (end-to-end).
    None,
    Ae,
    AeFm,
    Sts,
    Fsts,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [FeatureKind::None, FeatureKind::Ae, FeatureKind::AeFm, FeatureKind::Sts, FeatureKind::Fsts];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::None => "ete",
            FeatureKind::Ae => "ae",
            FeatureKind::AeFm => "ae-fm",
            FeatureKind::Sts => "sts",
            FeatureKind::Fsts => "fsts",
        }
    }

    fn code(self) -> u8 {
        FeatureKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn is_trainable(self) -> bool {
        self != FeatureKind::None
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ete" | "none" => Ok(FeatureKind::None),
            "ae" => Ok(FeatureKind::Ae),
            "ae-fm" | "aefm" => Ok(FeatureKind::AeFm),
            "sts" => Ok(FeatureKind::Sts),
            "fsts" => Ok(FeatureKind::Fsts),
            other => Err(FeatureError::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorDims {
    pub latent: usize,
    pub hidden: usize,
    pub window: usize,
}

impl Default for ExtractorDims {
    fn default() -> Self {
        ExtractorDims { latent: 50, hidden: 50, window: 5 }
    }
}

/// A network together with its optimizer state and epoch counter, so that
/// training can resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Part<M> {
    pub net: M,
    pub adam: Option<AdamState>,
    pub epochs: u64,
}

impl<M> Part<M> {
    fn new(net: M) -> Self {
        Part { net, adam: None, epochs: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    kind: FeatureKind,
    obs_dim: usize,
    act_dim: usize,
    dims: ExtractorDims,
    pub(crate) ae: Option<Part<Autoencoder>>,
    pub(crate) fm: Option<Part<ForwardModel>>,
    pub(crate) s2s: Option<Part<Seq2Seq>>,
}

/// Per-episode extractor state owned by one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    t: usize,
    fm: Option<LstmState>,
    prev_z: Vec<f64>,
    window: VecDeque<Vec<f64>>,
}

impl RolloutState {
    pub fn reset(&mut self) {
        self.t = 0;
        if let Some(s) = self.fm.as_mut() {
            s.reset();
        }
        self.prev_z.clear();
        self.window.clear();
    }

    pub fn steps(&self) -> usize {
        self.t
    }
}

const MAGIC: &[u8; 4] = b"FVFX";
const VERSION: u8 = 1;

impl FeatureExtractor {
    pub fn new(kind: FeatureKind, obs_dim: usize, act_dim: usize, dims: ExtractorDims, seed_value: u64) -> Result<Self, FeatureError> {
        if obs_dim == 0 || act_dim == 0 {
            return Err(FeatureError::Config("observation and action dimensions must be positive".into()));
        }
        if dims.latent == 0 || dims.hidden == 0 || dims.window == 0 {
            return Err(FeatureError::Config(format!("extractor sizes must be positive: {dims:?}")));
        }
        let mut rng = seed::rng(seed_value, &[seed::tag("extractor-init")]);
        let mut fx = FeatureExtractor { kind, obs_dim, act_dim, dims, ae: None, fm: None, s2s: None };
        match kind {
            FeatureKind::None => {}
            FeatureKind::Ae => fx.ae = Some(Part::new(Autoencoder::random(obs_dim, dims.latent, &mut rng))),
            FeatureKind::AeFm => {
                fx.ae = Some(Part::new(Autoencoder::random(obs_dim, dims.latent, &mut rng)));
                fx.fm = Some(Part::new(ForwardModel::random(dims.latent, act_dim, dims.hidden, &mut rng)));
            }
            FeatureKind::Sts | FeatureKind::Fsts => {
                fx.s2s = Some(Part::new(Seq2Seq::random(obs_dim, dims.hidden, &mut rng)));
            }
        }
        Ok(fx)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn dims(&self) -> ExtractorDims {
        self.dims
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            FeatureKind::None => self.obs_dim,
            FeatureKind::Ae => self.dims.latent,
            FeatureKind::AeFm => self.dims.latent + self.dims.hidden,
            FeatureKind::Sts | FeatureKind::Fsts => self.dims.hidden,
        }
    }

    pub fn autoencoder(&self) -> Option<&Autoencoder> {
        self.ae.as_ref().map(|p| &p.net)
    }

    pub fn autoencoder_mut(&mut self) -> Option<&mut Autoencoder> {
        self.ae.as_mut().map(|p| &mut p.net)
    }

    pub fn forward_model(&self) -> Option<&ForwardModel> {
        self.fm.as_ref().map(|p| &p.net)
    }

    pub fn forward_model_mut(&mut self) -> Option<&mut ForwardModel> {
        self.fm.as_mut().map(|p| &mut p.net)
    }

    pub fn seq2seq(&self) -> Option<&Seq2Seq> {
        self.s2s.as_ref().map(|p| &p.net)
    }

    pub fn seq2seq_mut(&mut self) -> Option<&mut Seq2Seq> {
        self.s2s.as_mut().map(|p| &mut p.net)
    }

    /// Epochs trained so far per component, in `ae`, `fm`, `s2s` order.
    pub fn epochs_trained(&self) -> [u64; 3] {
        [self.ae.as_ref().map_or(0, |p| p.epochs), self.fm.as_ref().map_or(0, |p| p.epochs), self.s2s.as_ref().map_or(0, |p| p.epochs)]
    }

    /// All trainable weights, with segment names prefixed by component.
    pub fn params(&self) -> ParameterVector {
        let mut layout = Vec::new();
        let mut values = Vec::new();
        let mut add = |pv: ParameterVector| {
            layout.extend_from_slice(pv.layout());
            values.extend_from_slice(pv.values());
        };
        if let Some(p) = &self.ae {
            add(p.net.params("ae."));
        }
        if let Some(p) = &self.fm {
            add(p.net.params("fm."));
        }
        if let Some(p) = &self.s2s {
            add(p.net.params("s2s."));
        }
        ParameterVector::unflatten(layout, values).expect("consistent extractor layout")
    }

    pub fn new_rollout(&self) -> RolloutState {
        RolloutState {
            t: 0,
            fm: self.fm.as_ref().map(|p| LstmState::zeros(p.net.hidden())),
            prev_z: Vec::new(),
            window: VecDeque::with_capacity(self.dims.window + 1),
        }
    }

    /// Feature vector for the observation at the current step. The previous
    /// action must be `None` exactly on the first step after a reset.
    pub fn extract(&self, state: &mut RolloutState, obs: &[f64], prev_action: Option<&[f64]>) -> Result<Vec<f64>, FeatureError> {
        if obs.len() != self.obs_dim {
            return Err(FeatureError::Data(format!("observation has {} values, expected {}", obs.len(), self.obs_dim)));
        }
        match (state.t, prev_action) {
            (0, Some(_)) => return Err(FeatureError::OutOfOrder("previous action given on the first step".into())),
            (t, None) if t > 0 => return Err(FeatureError::OutOfOrder(format!("no previous action at step {t}; reset the rollout state"))),
            (_, Some(a)) if a.len() != self.act_dim => {
                return Err(FeatureError::Data(format!("action has {} values, expected {}", a.len(), self.act_dim)))
            }
            _ => {}
        }
        let out = match self.kind {
            FeatureKind::None => obs.to_vec(),
            FeatureKind::Ae => self.autoencoder().unwrap().encode(obs)?,
            FeatureKind::AeFm => {
                let z = self.autoencoder().unwrap().encode(obs)?;
                let fm = self.forward_model().unwrap();
                let s = state.fm.as_mut().expect("rollout state built for this extractor");
                if let Some(a) = prev_action {
                    let input = [state.prev_z.as_slice(), a].concat();
                    *s = fm.lstm.step(s, &input)?;
                }
                let mut f = z.clone();
                f.extend_from_slice(&s.h);
                state.prev_z = z;
                f
            }
            FeatureKind::Sts | FeatureKind::Fsts => {
                let s2s = self.seq2seq().unwrap();
                let proj = s2s.encoder.project(obs)?;
                if state.t == 0 {
                    state.window.clear();
                    for _ in 1..self.dims.window {
                        state.window.push_back(proj.clone());
                    }
                }
                state.window.push_back(proj);
                while state.window.len() > self.dims.window {
                    state.window.pop_front();
                }
                let mut s = LstmState::zeros(s2s.hidden());
                for p in &state.window {
                    s = s2s.encoder.step_projected(&s, p)?.0;
                }
                s.h
            }
        };
        state.t += 1;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind.code());
        for d in [self.obs_dim, self.act_dim, self.dims.latent, self.dims.hidden, self.dims.window] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        fn part<M>(out: &mut Vec<u8>, p: &Part<M>, pv: ParameterVector) {
            write_params(out, &pv);
            out.extend_from_slice(&p.epochs.to_le_bytes());
            match &p.adam {
                Some(a) => {
                    out.push(1);
                    a.write_into(out);
                }
                None => out.push(0),
            }
        }
        if let Some(p) = &self.ae {
            part(&mut out, p, p.net.params("ae."));
        }
        if let Some(p) = &self.fm {
            part(&mut out, p, p.net.params("fm."));
        }
        if let Some(p) = &self.s2s {
            part(&mut out, p, p.net.params("s2s."));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut cursor = bytes;
        let fx = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(FeatureError::Format(format!("{} trailing bytes after extractor", cursor.len())));
        }
        Ok(fx)
    }

    pub(crate) fn read_from(cursor: &mut &[u8]) -> Result<Self, FeatureError> {
        fn take<'a>(c: &mut &'a [u8], n: usize) -> Result<&'a [u8], FeatureError> {
            if c.len() < n {
                return Err(FeatureError::Format("unexpected end of extractor data".into()));
            }
            let (h, t) = c.split_at(n);
            *c = t;
            Ok(h)
        }
        if take(cursor, 4)? != MAGIC {
            return Err(FeatureError::Format("not an extractor file".into()));
        }
        let version = take(cursor, 1)?[0];
        if version != VERSION {
            return Err(FeatureError::Format(format!("extractor version {version}, expected {VERSION}")));
        }
        let code = take(cursor, 1)?[0] as usize;
        let kind = *FeatureKind::ALL.get(code).ok_or_else(|| FeatureError::Format(format!("unknown kind code {code}")))?;
        let mut d = [0usize; 5];
        for v in d.iter_mut() {
            *v = u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()) as usize;
        }
        let dims = ExtractorDims { latent: d[2], hidden: d[3], window: d[4] };
        let mut fx = FeatureExtractor::new(kind, d[0], d[1], dims, 0)?;
        fn part<M>(
            cursor: &mut &[u8],
            p: &mut Part<M>,
            set: impl FnOnce(&mut M, &ParameterVector) -> Result<(), NnError>,
        ) -> Result<(), FeatureError> {
            let pv = read_params(cursor)?;
            set(&mut p.net, &pv)?;
            p.epochs = u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap());
            p.adam = match take(cursor, 1)?[0] {
                0 => None,
                1 => {
                    let a = AdamState::read_from(cursor)?;
                    if a.len() != pv.len() {
                        return Err(FeatureError::Format("optimizer state size mismatch".into()));
                    }
                    Some(a)
                }
                f => return Err(FeatureError::Format(format!("bad optimizer flag {f}"))),
            };
            Ok(())
        }
        if let Some(p) = fx.ae.as_mut() {
            part(cursor, p, |n, pv| n.set_params(pv, "ae."))?;
        }
        if let Some(p) = fx.fm.as_mut() {
            part(cursor, p, |n, pv| n.set_params(pv, "fm."))?;
        }
        if let Some(p) = fx.s2s.as_mut() {
            part(cursor, p, |n, pv| n.set_params(pv, "s2s."))?;
        }
        Ok(fx)
    }

    /// SHA-256 of the serialized weights and optimizer state.
    pub fn checksum(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(kind: FeatureKind) -> FeatureExtractor {
        FeatureExtractor::new(kind, 4, 2, ExtractorDims::default(), 3).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.as_str().parse::<FeatureKind>().unwrap(), k);
        }
        assert!("vae".parse::<FeatureKind>().is_err());
    }

    #[test]
    fn pass_through() {
        let f = fx(FeatureKind::None);
        let mut s = f.new_rollout();
        assert_eq!(f.extract(&mut s, &[1.0, 2.0, 3.0, 4.0], None).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn aefm_first_step_has_zero_memory() {
        let f = fx(FeatureKind::AeFm);
        let mut s = f.new_rollout();
        let out = f.extract(&mut s, &[0.1, 0.2, 0.3, 0.4], None).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out[50..].iter().all(|&v| v == 0.0));
        assert!(out[..50].iter().any(|&v| v != 0.0));
        let out = f.extract(&mut s, &[0.1, 0.2, 0.3, 0.4], Some(&[0.5, -0.5])).unwrap();
        assert!(out[50..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn out_of_order_rejected() {
        let f = fx(FeatureKind::Sts);
        let mut s = f.new_rollout();
        assert!(matches!(f.extract(&mut s, &[0.0; 4], Some(&[0.0, 0.0])), Err(FeatureError::OutOfOrder(_))));
        f.extract(&mut s, &[0.0; 4], None).unwrap();
        assert!(matches!(f.extract(&mut s, &[0.0; 4], None), Err(FeatureError::OutOfOrder(_))));
        s.reset();
        s.reset();
        f.extract(&mut s, &[0.0; 4], None).unwrap();
    }

    #[test]
    fn bytes_round_trip() {
        for k in FeatureKind::ALL {
            let f = fx(k);
            let back = FeatureExtractor::from_bytes(&f.to_bytes()).unwrap();
            assert_eq!(back, f);
            assert_eq!(back.checksum(), f.checksum());
        }
        let mut bytes = fx(FeatureKind::Ae).to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(FeatureExtractor::from_bytes(&bytes).is_err());
    }
}
