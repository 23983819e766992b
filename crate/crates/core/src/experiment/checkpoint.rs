//! Checkpoint encoding. Every random stream is derived from the master seed
//! and coordinates, so no generator state needs saving.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError, RunLog, RunState};
use crate::es::RunningStat;
use crate::features::{Dataset, FeatureExtractor};
use crate::nn::AdamState;

const MAGIC: &[u8; 4] = b"FVCK";
pub const VERSION: u8 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn put_opt(out: &mut Vec<u8>, v: Option<f64>) {
    match v {
        Some(x) => {
            out.push(1);
            put_f64(out, x);
        }
        None => out.push(0),
    }
}

pub(crate) fn encode(config: &ExperimentConfig, s: &RunState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_blob(&mut out, config.to_text().as_bytes());
    out.push(s.setup_done as u8);
    out.push(s.finished as u8);
    put_u64(&mut out, s.generation);
    put_u64(&mut out, s.env_steps);
    put_u64(&mut out, s.pending_steps);
    put_u64(&mut out, s.next_mark as u64);
    put_f64(&mut out, s.best_so_far);
    put_opt(&mut out, s.train_mse);
    put_u64(&mut out, s.center.len() as u64);
    s.center.iter().for_each(|v| put_f64(&mut out, *v));
    s.adam.write_into(&mut out);
    put_u64(&mut out, s.stat.count);
    put_u64(&mut out, s.stat.dim() as u64);
    s.stat.mean.iter().chain(&s.stat.m2).for_each(|v| put_f64(&mut out, *v));
    put_blob(&mut out, &s.extractor.to_bytes());
    match &s.dataset {
        Some(d) => {
            out.push(1);
            put_blob(&mut out, &d.to_bytes());
        }
        None => out.push(0),
    }
    put_blob(&mut out, s.log.to_csv().as_bytes());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ExperimentError> {
        if self.0.len() < n {
            return Err(ExperimentError::Checkpoint("unexpected end of data".into()));
        }
        let (h, t) = self.0.split_at(n);
        self.0 = t;
        Ok(h)
    }

    fn u8(&mut self) -> Result<u8, ExperimentError> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool, ExperimentError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            f => Err(ExperimentError::Checkpoint(format!("bad flag byte {f}"))),
        }
    }

    fn u64(&mut self) -> Result<u64, ExperimentError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ExperimentError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ExperimentError> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn blob(&mut self) -> Result<&'a [u8], ExperimentError> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn text(&mut self) -> Result<&'a str, ExperimentError> {
        std::str::from_utf8(self.blob()?).map_err(|e| ExperimentError::Checkpoint(format!("text field: {e}")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(ExperimentConfig, RunState), ExperimentError> {
    if bytes.len() < 4 + 1 + 32 || &bytes[..4] != MAGIC {
        return Err(ExperimentError::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ExperimentError::Checkpoint("integrity check failed (file truncated or corrupted)".into()));
    }
    if body[4] != VERSION {
        return Err(ExperimentError::Checkpoint(format!(
            "checkpoint version {} is not supported (this build reads version {VERSION})",
            body[4]
        )));
    }
    let mut r = Reader(&body[5..]);
    let config = ExperimentConfig::from_text(r.text()?)?;
    let setup_done = r.flag()?;
    let finished = r.flag()?;
    let generation = r.u64()?;
    let env_steps = r.u64()?;
    let pending_steps = r.u64()?;
    let next_mark = r.u64()? as usize;
    let best_so_far = r.f64()?;
    let train_mse = if r.flag()? { Some(r.f64()?) } else { None };
    let n = r.u64()? as usize;
    let center = r.f64s(n)?;
    let adam = AdamState::read_from(&mut r.0)?;
    if adam.len() != center.len() {
        return Err(ExperimentError::Checkpoint("optimizer size does not match the center".into()));
    }
    let count = r.u64()?;
    let dim = r.u64()? as usize;
    let mean = r.f64s(dim)?;
    let m2 = r.f64s(dim)?;
    let extractor = FeatureExtractor::from_bytes(r.blob()?)?;
    let dataset = if r.flag()? { Some(Arc::new(Dataset::from_bytes(r.blob()?)?)) } else { None };
    let log = RunLog::from_csv(r.text()?)?;
    if !r.0.is_empty() {
        return Err(ExperimentError::Checkpoint(format!("{} trailing bytes", r.0.len())));
    }
    let state = RunState {
        setup_done,
        generation,
        env_steps,
        pending_steps,
        center,
        adam,
        stat: RunningStat { count, mean, m2 },
        extractor: Arc::new(extractor),
        dataset,
        best_so_far,
        train_mse,
        next_mark,
        finished,
        log,
    };
    Ok((config, state))
}
