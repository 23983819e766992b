//! Dense network kernels sized for small controllers and feature extractors:
//! feed-forward nets, an LSTM cell with backpropagation through time, the
//! squared-error loss and an Adam optimizer. Everything is `f64`.

mod adam;
mod dense;
mod loss;
mod lstm;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, FeedForwardNet, ForwardTrace};
pub use loss::{mse, mse_grad, mse_loss};
pub use lstm::{LstmCache, LstmCell, LstmState};
pub use params::{ParameterVector, Segment};

pub(crate) use params::{read_from as read_params, write_into as write_params};

use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter data: {0}")]
    Format(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::Dimension { what, expected, got })
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform<R: Rng>(rng: &mut R, out: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-bound..=bound);
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
