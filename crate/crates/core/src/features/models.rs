//! The three trainable extractor networks. Each exposes its weights as one
//! flat vector (component nets concatenated in a fixed order) and accumulates
//! loss gradients in the same layout.

use rand::Rng;

use crate::nn::{mse, Activation, FeedForwardNet, LstmCache, LstmCell, LstmState, NnError, ParameterVector, Segment};

fn sq_err_grad(pred: &[f64], target: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let n = pred.len() as f64;
    let mut s = 0.0;
    for ((o, p), t) in out.iter_mut().zip(pred).zip(target) {
        let d = p - t;
        s += d * d;
        *o = scale * 2.0 * d / n;
    }
    s / n
}

fn concat(parts: &[(&str, &ParameterVector)]) -> ParameterVector {
    let mut layout = Vec::new();
    let mut values = Vec::new();
    for (prefix, pv) in parts {
        layout.extend(pv.layout().iter().map(|s| Segment::new(format!("{prefix}{}", s.name), &s.shape)));
        values.extend_from_slice(pv.values());
    }
    ParameterVector::unflatten(layout, values).expect("layout sizes match values")
}

fn check_layout(expected: &ParameterVector, got: &ParameterVector) -> Result<(), NnError> {
    if expected.layout() != got.layout() {
        return Err(NnError::Format("parameter segment table does not match the architecture".into()));
    }
    Ok(())
}

/// Feed-forward autoencoder `obs -> latent (tanh) -> obs (linear)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
}

impl Autoencoder {
    pub fn random<R: Rng>(obs: usize, latent: usize, rng: &mut R) -> Self {
        Autoencoder {
            encoder: FeedForwardNet::random(&[obs, latent], Activation::Tanh, rng),
            decoder: FeedForwardNet::random(&[latent, obs], Activation::Linear, rng),
        }
    }

    pub fn latent(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.encoder.forward(obs)
    }

    pub fn reconstruct(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.decoder.forward(&self.encode(obs)?)
    }

    pub fn params(&self, prefix: &str) -> ParameterVector {
        concat(&[(&format!("{prefix}enc."), self.encoder.params()), (&format!("{prefix}dec."), self.decoder.params())])
    }

    pub fn set_params(&mut self, pv: &ParameterVector, prefix: &str) -> Result<(), NnError> {
        check_layout(&self.params(prefix), pv)?;
        self.set_values(pv.values())
    }

    pub fn len(&self) -> usize {
        self.encoder.params().len() + self.decoder.params().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        [self.encoder.params().values(), self.decoder.params().values()].concat()
    }

    pub fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        crate::nn::check_len("autoencoder parameters", self.len(), v.len())?;
        let n = self.encoder.params().len();
        self.encoder.set_values(&v[..n])?;
        self.decoder.set_values(&v[n..])
    }

    pub fn loss(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(mse(&self.reconstruct(obs)?, obs))
    }

    /// Reconstruction MSE of `obs`; adds `scale * dMSE/dparams` to `grad`.
    pub fn accumulate(&self, obs: &[f64], grad: &mut [f64], scale: f64) -> Result<f64, NnError> {
        let enc = self.encoder.forward_trace(obs)?;
        let dec = self.decoder.forward_trace(enc.output())?;
        let mut d_out = vec![0.0; obs.len()];
        let loss = sq_err_grad(dec.output(), obs, scale, &mut d_out);
        let n = self.encoder.params().len();
        let (g_enc, g_dec) = grad.split_at_mut(n);
        let mut d_z = vec![0.0; self.latent()];
        self.decoder.backward_into(&dec, &d_out, g_dec, Some(&mut d_z))?;
        self.encoder.backward_into(&enc, &d_z, g_enc, None)?;
        Ok(loss)
    }
}

/// LSTM over `z_t || a_t` with a linear readout predicting `z_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub lstm: LstmCell,
    pub readout: FeedForwardNet,
}

impl ForwardModel {
    pub fn random<R: Rng>(latent: usize, act: usize, hidden: usize, rng: &mut R) -> Self {
        ForwardModel {
            lstm: LstmCell::random(latent + act, hidden, rng),
            readout: FeedForwardNet::random(&[hidden, latent], Activation::Linear, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden_size()
    }

    pub fn params(&self, prefix: &str) -> ParameterVector {
        concat(&[(&format!("{prefix}lstm."), self.lstm.params()), (&format!("{prefix}readout."), self.readout.params())])
    }

    pub fn set_params(&mut self, pv: &ParameterVector, prefix: &str) -> Result<(), NnError> {
        check_layout(&self.params(prefix), pv)?;
        self.set_values(pv.values())
    }

    pub fn len(&self) -> usize {
        self.lstm.params().len() + self.readout.params().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        [self.lstm.params().values(), self.readout.params().values()].concat()
    }

    pub fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        crate::nn::check_len("forward-model parameters", self.len(), v.len())?;
        let n = self.lstm.params().len();
        self.lstm.params_mut().values_mut().copy_from_slice(&v[..n]);
        self.readout.set_values(&v[n..])
    }

    fn inputs(zs: &[Vec<f64>], acts: &[Vec<f64>]) -> Vec<Vec<f64>> {
        zs.iter().zip(acts).map(|(z, a)| [z.as_slice(), a.as_slice()].concat()).collect()
    }

    /// Sum over the chunk of per-step prediction MSE, from the zero state.
    /// `zs` has one more entry than `acts`: the final target.
    pub fn chunk_loss(&self, zs: &[Vec<f64>], acts: &[Vec<f64>]) -> Result<f64, NnError> {
        let (caches, _) = self.lstm.forward_sequence(&LstmState::zeros(self.hidden()), &Self::inputs(&zs[..acts.len()], acts))?;
        let mut total = 0.0;
        for (k, c) in caches.iter().enumerate() {
            total += mse(&self.readout.forward(&c.h)?, &zs[k + 1]);
        }
        Ok(total)
    }

    pub fn accumulate(&self, zs: &[Vec<f64>], acts: &[Vec<f64>], grad: &mut [f64], scale: f64) -> Result<f64, NnError> {
        debug_assert_eq!(zs.len(), acts.len() + 1);
        let (caches, _) = self.lstm.forward_sequence(&LstmState::zeros(self.hidden()), &Self::inputs(&zs[..acts.len()], acts))?;
        let n = self.lstm.params().len();
        let (g_lstm, g_read) = grad.split_at_mut(n);
        let mut total = 0.0;
        let mut dh_steps = Vec::with_capacity(caches.len());
        let mut d_out = vec![0.0; self.readout.output_dim()];
        for (k, c) in caches.iter().enumerate() {
            let trace = self.readout.forward_trace(&c.h)?;
            total += sq_err_grad(trace.output(), &zs[k + 1], scale, &mut d_out);
            let mut dh = vec![0.0; self.hidden()];
            self.readout.backward_into(&trace, &d_out, g_read, Some(&mut dh))?;
            dh_steps.push(dh);
        }
        self.lstm.backward_sequence(&caches, Some(&dh_steps), None, g_lstm, None)?;
        Ok(total)
    }
}

/// Encoder LSTM over a window; its final `(h, c)` seeds an input-free
/// decoder LSTM whose states are read out to observation-sized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub readout: FeedForwardNet,
}

impl Seq2Seq {
    pub fn random<R: Rng>(obs: usize, hidden: usize, rng: &mut R) -> Self {
        Seq2Seq {
            encoder: LstmCell::random(obs, hidden, rng),
            decoder: LstmCell::random(0, hidden, rng),
            readout: FeedForwardNet::random(&[hidden, obs], Activation::Linear, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden_size()
    }

    pub fn params(&self, prefix: &str) -> ParameterVector {
        concat(&[
            (&format!("{prefix}enc."), self.encoder.params()),
            (&format!("{prefix}dec."), self.decoder.params()),
            (&format!("{prefix}readout."), self.readout.params()),
        ])
    }

    pub fn set_params(&mut self, pv: &ParameterVector, prefix: &str) -> Result<(), NnError> {
        check_layout(&self.params(prefix), pv)?;
        self.set_values(pv.values())
    }

    pub fn len(&self) -> usize {
        self.encoder.params().len() + self.decoder.params().len() + self.readout.params().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        [self.encoder.params().values(), self.decoder.params().values(), self.readout.params().values()].concat()
    }

    pub fn set_values(&mut self, v: &[f64]) -> Result<(), NnError> {
        crate::nn::check_len("seq2seq parameters", self.len(), v.len())?;
        let a = self.encoder.params().len();
        let b = a + self.decoder.params().len();
        self.encoder.params_mut().values_mut().copy_from_slice(&v[..a]);
        self.decoder.params_mut().values_mut().copy_from_slice(&v[a..b]);
        self.readout.set_values(&v[b..])
    }

    pub fn encode(&self, window: &[Vec<f64>]) -> Result<LstmState, NnError> {
        let mut s = LstmState::zeros(self.hidden());
        for x in window {
            s = self.encoder.step(&s, x)?;
        }
        Ok(s)
    }

    fn decode_caches(&self, init: &LstmState, steps: usize) -> Result<Vec<LstmCache>, NnError> {
        Ok(self.decoder.forward_sequence(init, &vec![Vec::new(); steps])?.0)
    }

    /// Decoder outputs in chronological target order, plus the feature `h`.
    pub fn forward(&self, window: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>), NnError> {
        let state = self.encode(window)?;
        let caches = self.decode_caches(&state, window.len())?;
        let outs = caches.iter().map(|c| self.readout.forward(&c.h)).collect::<Result<_, _>>()?;
        Ok((outs, state.h))
    }

    /// Mean squared error over all `K * obs` output components.
    pub fn loss(&self, window: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, NnError> {
        let (outs, _) = self.forward(window)?;
        Ok(outs.iter().zip(targets).map(|(o, t)| mse(o, t)).sum::<f64>() / outs.len() as f64)
    }

    pub fn accumulate(&self, window: &[Vec<f64>], targets: &[Vec<f64>], grad: &mut [f64], scale: f64) -> Result<f64, NnError> {
        let k = window.len();
        crate::nn::check_len("seq2seq targets", k, targets.len())?;
        let (enc_caches, enc_final) = self.encoder.forward_sequence(&LstmState::zeros(self.hidden()), window)?;
        let dec_caches = self.decode_caches(&enc_final, k)?;
        let a = self.encoder.params().len();
        let b = a + self.decoder.params().len();
        let (g_enc, rest) = grad.split_at_mut(a);
        let (g_dec, g_read) = rest.split_at_mut(b - a);
        let mut total = 0.0;
        let mut dh_steps = Vec::with_capacity(k);
        let mut d_out = vec![0.0; self.readout.output_dim()];
        for (c, t) in dec_caches.iter().zip(targets) {
            let trace = self.readout.forward_trace(&c.h)?;
            total += sq_err_grad(trace.output(), t, scale / k as f64, &mut d_out);
            let mut dh = vec![0.0; self.hidden()];
            self.readout.backward_into(&trace, &d_out, g_read, Some(&mut dh))?;
            dh_steps.push(dh);
        }
        let (dh0, dc0) = self.decoder.backward_sequence(&dec_caches, Some(&dh_steps), None, g_dec, None)?;
        self.encoder.backward_sequence(&enc_caches, None, Some((&dh0, &dc0)), g_enc, None)?;
        Ok(total / k as f64)
    }
}
