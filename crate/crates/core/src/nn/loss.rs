use super::{check_len, NnError};

/// Mean of squared componentwise differences, without length checking.
#[inline]
pub fn mse(prediction: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(prediction.len(), target.len());
    if prediction.is_empty() {
        return 0.0;
    }
    let s: f64 = prediction.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    s / prediction.len() as f64
}

/// Writes `2 (pred - target) / n * scale` into `out`.
#[inline]
pub fn mse_grad(prediction: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
    let k = 2.0 * scale / prediction.len().max(1) as f64;
    for ((o, p), t) in out.iter_mut().zip(prediction).zip(target) {
        *o = k * (p - t);
    }
}

/// Loss value and gradient with respect to the prediction.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    check_len("mse target", prediction.len(), target.len())?;
    let mut g = vec![0.0; prediction.len()];
    mse_grad(prediction, target, 1.0, &mut g);
    Ok((mse(prediction, target), g))
}
