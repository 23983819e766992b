use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, EpisodeRecord, Replacement};
use super::models::{Autoencoder, ForwardModel, Seq2Seq};
use super::{FeatureError, FeatureExtractor, FeatureKind, Part};
use crate::nn::{AdamConfig, AdamState, NnError};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Longest transition chunk used for truncated BPTT in the forward model.
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 500, batch_size: 32, learning_rate: 1e-3, chunk_len: 16, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), FeatureError> {
        if self.batch_size == 0 || self.chunk_len == 0 {
            return Err(FeatureError::Config("batch size and chunk length must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FeatureError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinualConfig {
    pub enabled: bool,
    pub pretrain_epochs: usize,
    pub epochs_per_generation: usize,
    pub replacement_fraction: f64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig { enabled: false, pretrain_epochs: 500, epochs_per_generation: 10, replacement_fraction: 0.01 }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.replacement_fraction > 0.0 && self.replacement_fraction <= 1.0) {
            return Err(FeatureError::Config(format!("replacement fraction must be in (0, 1], got {}", self.replacement_fraction)));
        }
        if self.epochs_per_generation == 0 {
            return Err(FeatureError::Config("epochs per generation must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    pub mse: f64,
    pub samples: usize,
    pub skipped_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean training loss per epoch, one list per trained component.
    pub epoch_losses: Vec<Vec<f64>>,
}

trait Trainable {
    const TAG: u64;
    fn values(&self) -> Vec<f64>;
    fn set_values(&mut self, v: &[f64]) -> Result<(), NnError>;
}

impl Trainable for Autoencoder {
    const TAG: u64 = seed::tag("train-ae");
    fn values(&self) -> Vec<f64> {
        Autoencoder::values(self)
    }
    fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        Autoencoder::set_values(self, v)
    }
}

impl Trainable for ForwardModel {
    const TAG: u64 = seed::tag("train-fm");
    fn values(&self) -> Vec<f64> {
        ForwardModel::values(self)
    }
    fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        ForwardModel::set_values(self, v)
    }
}

impl Trainable for Seq2Seq {
    const TAG: u64 = seed::tag("train-s2s");
    fn values(&self) -> Vec<f64> {
        Seq2Seq::values(self)
    }
    fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        Seq2Seq::set_values(self, v)
    }
}

/// Minibatch Adam epochs. Each sample carries a weight (the number of loss
/// terms it sums); batch gradients are divided by the batch's total weight.
/// The shuffle stream of epoch `e` depends only on the seed and `e`, so
/// interrupted training resumes identically.
fn run_epochs<M: Trainable, S>(
    part: &mut Part<M>,
    cfg: &TrainConfig,
    mut samples_for: impl FnMut(&mut ChaCha8Rng) -> Vec<S>,
    weight: impl Fn(&S) -> usize,
    accumulate: impl Fn(&M, &S, &mut [f64], f64) -> Result<f64, NnError>,
) -> Result<Vec<f64>, FeatureError> {
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut values = part.net.values();
    let adam = part.adam.get_or_insert_with(|| AdamState::new(values.len(), AdamConfig::with_stepsize(cfg.learning_rate)));
    adam.config.stepsize = cfg.learning_rate;
    let mut grad = vec![0.0; values.len()];
    for _ in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, &[M::TAG, part.epochs]);
        let mut samples = samples_for(&mut rng);
        if samples.is_empty() {
            return Err(FeatureError::Data("no training samples of the required length".into()));
        }
        samples.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in samples.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w: usize = batch.iter().map(&weight).sum();
            let scale = 1.0 / w as f64;
            for s in batch {
                total += accumulate(&part.net, s, &mut grad, scale)?;
            }
            count += w;
            adam.update(&mut values, &grad, 0.0)?;
            part.net.set_values(&values)?;
        }
        part.epochs += 1;
        losses.push(total / count as f64);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    episode: usize,
    start: usize,
    len: usize,
}

/// Splits every episode's transitions into chunks of at most `len`, the first
/// one shortened to `offset` when `offset > 0`.
fn chunks(transitions: &[usize], len: usize, offset: usize) -> Vec<Chunk> {
    let mut out = Vec::new();
    for (episode, &n) in transitions.iter().enumerate() {
        let mut start = 0;
        if offset > 0 && offset < n {
            out.push(Chunk { episode, start: 0, len: offset });
            start = offset;
        }
        while start < n {
            let l = len.min(n - start);
            out.push(Chunk { episode, start, len: l });
            start += l;
        }
    }
    out
}

fn latents(ae: &Autoencoder, episodes: &[&EpisodeRecord]) -> Result<Vec<Vec<Vec<f64>>>, NnError> {
    episodes.iter().map(|e| e.obs.iter().map(|o| ae.encode(o)).collect()).collect()
}

#[derive(Debug, Clone, Copy)]
struct Window {
    episode: usize,
    start: usize,
}

fn windows(episodes: &[&EpisodeRecord], k: usize, predictive: bool) -> (Vec<Window>, usize) {
    let need = k + predictive as usize;
    let mut out = Vec::new();
    let mut skipped = 0;
    for (episode, e) in episodes.iter().enumerate() {
        if e.len() < need {
            skipped += 1;
            continue;
        }
        out.extend((0..=e.len() - need).map(|start| Window { episode, start }));
    }
    (out, skipped)
}

fn window_pair<'a>(episodes: &[&'a EpisodeRecord], w: &Window, k: usize, predictive: bool) -> (&'a [Vec<f64>], &'a [Vec<f64>]) {
    let obs = &episodes[w.episode].obs;
    let input = &obs[w.start..w.start + k];
    let shift = predictive as usize;
    (input, &obs[w.start + shift..w.start + shift + k])
}

fn check_dataset(fx: &FeatureExtractor, ds: &Dataset) -> Result<(), FeatureError> {
    if ds.obs_dim() != fx.obs_dim() || ds.act_dim() != fx.act_dim() {
        return Err(FeatureError::Data(format!(
            "dataset dims {}/{} do not match extractor dims {}/{}",
            ds.obs_dim(),
            ds.act_dim(),
            fx.obs_dim(),
            fx.act_dim()
        )));
    }
    if ds.is_empty() {
        return Err(FeatureError::Data("dataset is empty".into()));
    }
    Ok(())
}

/// Self-supervised objective of the extractor over `probe`, without
/// updating anything. Autoencoder plus forward model reports the mean of the
/// reconstruction and next-latent errors.
pub fn measure_mse(fx: &FeatureExtractor, probe: &Dataset) -> Result<MseReport, FeatureError> {
    if fx.kind() == FeatureKind::None {
        return Err(FeatureError::Config("the pass-through extractor has no training objective".into()));
    }
    check_dataset(fx, probe)?;
    let episodes: Vec<&EpisodeRecord> = probe.episodes().collect();
    let ae_mse = |ae: &Autoencoder| -> Result<(f64, usize), NnError> {
        let mut s = 0.0;
        let mut n = 0;
        for e in &episodes {
            for o in &e.obs {
                s += ae.loss(o)?;
                n += 1;
            }
        }
        Ok((s / n as f64, n))
    };
    match fx.kind() {
        FeatureKind::Ae => {
            let (mse, samples) = ae_mse(fx.autoencoder().unwrap())?;
            Ok(MseReport { mse, samples, skipped_episodes: 0 })
        }
        FeatureKind::AeFm => {
            let ae = fx.autoencoder().unwrap();
            let fm = fx.forward_model().unwrap();
            let (rec, samples) = ae_mse(ae)?;
            let zs = latents(ae, &episodes)?;
            let transitions: Vec<usize> = episodes.iter().map(|e| e.len() - 1).collect();
            let skipped = transitions.iter().filter(|&&n| n == 0).count();
            let (mut s, mut n) = (0.0, 0usize);
            for c in chunks(&transitions, usize::MAX, 0) {
                s += fm.chunk_loss(&zs[c.episode][c.start..=c.start + c.len], &episodes[c.episode].actions[c.start..c.start + c.len])?;
                n += c.len;
            }
            if n == 0 {
                return Err(FeatureError::Data("no episode has a transition".into()));
            }
            Ok(MseReport { mse: 0.5 * (rec + s / n as f64), samples, skipped_episodes: skipped })
        }
        FeatureKind::Sts | FeatureKind::Fsts => {
            let predictive = fx.kind() == FeatureKind::Fsts;
            let s2s = fx.seq2seq().unwrap();
            let k = fx.dims().window;
            let (ws, skipped) = windows(&episodes, k, predictive);
            if ws.is_empty() {
                return Err(FeatureError::Data(format!("no probe episode holds a full window ({skipped} skipped)")));
            }
            let mut s = 0.0;
            for w in &ws {
                let (x, t) = window_pair(&episodes, w, k, predictive);
                s += s2s.loss(x, t)?;
            }
            Ok(MseReport { mse: s / ws.len() as f64, samples: ws.len(), skipped_episodes: skipped })
        }
        FeatureKind::None => unreachable!(),
    }
}

fn train_ae(part: &mut Part<Autoencoder>, episodes: &[&EpisodeRecord], cfg: &TrainConfig) -> Result<Vec<f64>, FeatureError> {
    let all: Vec<&[f64]> = episodes.iter().flat_map(|e| e.obs.iter().map(Vec::as_slice)).collect();
    run_epochs(part, cfg, |_| all.clone(), |_| 1, |net, o, g, s| net.accumulate(o, g, s))
}

fn train_fm(
    part: &mut Part<ForwardModel>,
    ae: &Autoencoder,
    episodes: &[&EpisodeRecord],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, FeatureError> {
    let zs = latents(ae, episodes)?;
    let transitions: Vec<usize> = episodes.iter().map(|e| e.len() - 1).collect();
    let chunk_len = cfg.chunk_len;
    run_epochs(
        part,
        cfg,
        |rng| chunks(&transitions, chunk_len, rng.gen_range(0..chunk_len)),
        |c| c.len,
        |net, c, g, s| {
            net.accumulate(&zs[c.episode][c.start..=c.start + c.len], &episodes[c.episode].actions[c.start..c.start + c.len], g, s)
        },
    )
}

fn train_s2s(
    part: &mut Part<Seq2Seq>,
    episodes: &[&EpisodeRecord],
    k: usize,
    predictive: bool,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, FeatureError> {
    let (ws, _) = windows(episodes, k, predictive);
    run_epochs(
        part,
        cfg,
        |_| ws.clone(),
        |_| 1,
        |net, w, g, s| {
            let (x, t) = window_pair(episodes, w, k, predictive);
            net.accumulate(x, t, g, s)
        },
    )
}

/// Trains the extractor on `ds` for `cfg.epochs` epochs. The autoencoder
/// plus forward model trains the autoencoder first, then the forward model
/// on latents of the now fixed autoencoder. A pass-through extractor is left
/// unchanged.
pub fn pretrain(fx: &mut FeatureExtractor, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, FeatureError> {
    if fx.kind() == FeatureKind::None {
        log::warn!("pretrain called on the pass-through extractor; nothing to train");
        return Ok(TrainReport::default());
    }
    cfg.validate()?;
    check_dataset(fx, ds)?;
    let initial_mse = measure_mse(fx, ds)?.mse;
    if cfg.epochs == 0 {
        return Ok(TrainReport { initial_mse, final_mse: initial_mse, epoch_losses: Vec::new() });
    }
    let episodes: Vec<&EpisodeRecord> = ds.episodes().collect();
    let mut epoch_losses = Vec::new();
    match fx.kind() {
        FeatureKind::Ae => epoch_losses.push(train_ae(fx.ae.as_mut().unwrap(), &episodes, cfg)?),
        FeatureKind::AeFm => {
            epoch_losses.push(train_ae(fx.ae.as_mut().unwrap(), &episodes, cfg)?);
            if episodes.iter().all(|e| e.len() < 2) {
                return Err(FeatureError::Data("forward model needs episodes with at least two steps".into()));
            }
            let ae = fx.ae.as_ref().unwrap().net.clone();
            epoch_losses.push(train_fm(fx.fm.as_mut().unwrap(), &ae, &episodes, cfg)?);
        }
        FeatureKind::Sts | FeatureKind::Fsts => {
            let k = fx.dims().window;
            let predictive = fx.kind() == FeatureKind::Fsts;
            epoch_losses.push(train_s2s(fx.s2s.as_mut().unwrap(), &episodes, k, predictive, cfg)?);
        }
        FeatureKind::None => unreachable!(),
    }
    let final_mse = measure_mse(fx, ds)?.mse;
    Ok(TrainReport { initial_mse, final_mse, epoch_losses })
}

/// Replaces the oldest share of `ds` with `fresh` episodes and trains for the
/// per-generation epoch count. Returns `None` without touching anything when
/// continual training is off or the extractor is the pass-through one.
pub fn continual_update(
    fx: &mut FeatureExtractor,
    ds: &mut Dataset,
    fresh: Vec<EpisodeRecord>,
    continual: &ContinualConfig,
    cfg: &TrainConfig,
) -> Result<Option<(Replacement, TrainReport)>, FeatureError> {
    if !continual.enabled || fx.kind() == FeatureKind::None {
        return Ok(None);
    }
    continual.validate()?;
    if fresh.is_empty() {
        return Err(FeatureError::Data("continual update needs at least one fresh episode".into()));
    }
    let replaced = ds.replace_oldest(fresh, continual.replacement_fraction)?;
    let report = pretrain(fx, ds, &TrainConfig { epochs: continual.epochs_per_generation, ..cfg.clone() })?;
    Ok(Some((replaced, report)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_split_covers_transitions() {
        let c = chunks(&[10, 3], 4, 2);
        let spans: Vec<(usize, usize, usize)> = c.iter().map(|c| (c.episode, c.start, c.len)).collect();
        assert_eq!(spans, vec![(0, 0, 2), (0, 2, 4), (0, 6, 4), (1, 0, 2), (1, 2, 1)]);
        let c = chunks(&[5], 16, 0);
        assert_eq!((c.len(), c[0].len), (1, 5));
        assert!(chunks(&[0], 4, 1).is_empty());
    }

    #[test]
    fn windows_skip_short_episodes() {
        let mk = |n: usize| EpisodeRecord { obs: vec![vec![0.0]; n], actions: vec![vec![0.0]; n] };
        let (a, b) = (mk(4), mk(7));
        let (w, skipped) = windows(&[&a, &b], 5, false);
        assert_eq!((w.len(), skipped), (3, 1));
        let (w, _) = windows(&[&a, &b], 5, true);
        assert_eq!(w.len(), 2);
    }
}
