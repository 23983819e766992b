use super::{check_len, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub stepsize: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { stepsize: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_stepsize(stepsize: f64) -> Self {
        AdamConfig { stepsize, ..Self::default() }
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState { config, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step on `gradient`, then decoupled decay
    /// `params *= 1 - weight_decay * stepsize`. A non-finite gradient is
    /// rejected before anything is modified.
    pub fn update(&mut self, params: &mut [f64], gradient: &[f64], weight_decay: f64) -> Result<(), NnError> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradient", self.m.len(), gradient.len())?;
        if !gradient.iter().all(|g| g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        let AdamConfig { stepsize, beta1, beta2, epsilon } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let shrink = 1.0 - weight_decay * stepsize;
        for i in 0..params.len() {
            let g = gradient[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= stepsize * m_hat / (v_hat.sqrt() + epsilon);
            if weight_decay != 0.0 {
                params[i] *= shrink;
            }
        }
        Ok(())
    }

    pub(crate) fn write_into(&self, out: &mut Vec<u8>) {
        for x in [self.config.stepsize, self.config.beta1, self.config.beta2, self.config.epsilon] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub(crate) fn read_from(cursor: &mut &[u8]) -> Result<Self, NnError> {
        let f = |c: &mut &[u8]| -> Result<[u8; 8], NnError> {
            if c.len() < 8 {
                return Err(NnError::Format("unexpected end of optimizer data".into()));
            }
            let (h, t) = c.split_at(8);
            *c = t;
            Ok(h.try_into().unwrap())
        };
        let stepsize = f64::from_le_bytes(f(cursor)?);
        let beta1 = f64::from_le_bytes(f(cursor)?);
        let beta2 = f64::from_le_bytes(f(cursor)?);
        let epsilon = f64::from_le_bytes(f(cursor)?);
        let t = u64::from_le_bytes(f(cursor)?);
        let n = u64::from_le_bytes(f(cursor)?) as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(f64::from_le_bytes(f(cursor)?));
        }
        for _ in 0..n {
            v.push(f64::from_le_bytes(f(cursor)?));
        }
        Ok(AdamState { config: AdamConfig { stepsize, beta1, beta2, epsilon }, m, v, t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        st.update(&mut p, &[0.0; 3], 0.0).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_sign_like() {
        let cfg = AdamConfig::with_stepsize(0.1);
        let mut st = AdamState::new(3, cfg);
        let g = [2.0, -0.5, 1e-3];
        let mut p = vec![0.0; 3];
        st.update(&mut p, &g, 0.0).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.1 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
        }
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        st.update(&mut p, &[0.3, 0.1], 0.0).unwrap();
        let before = (st.clone(), p.clone());
        assert_eq!(st.update(&mut p, &[f64::NAN, 0.0], 0.0), Err(NnError::NonFinite("gradient")));
        assert_eq!((st, p), before);
    }

    #[test]
    fn second_moment_non_negative_and_decay_shrinks() {
        let mut st = AdamState::new(2, AdamConfig::with_stepsize(0.01));
        let mut p = vec![1.0, -1.0];
        for k in 0..10 {
            let g = [(k as f64).sin(), -(k as f64).cos()];
            st.update(&mut p, &g, 0.0).unwrap();
            assert!(st.v.iter().all(|&v| v >= 0.0));
        }
        let mut q = vec![1.0];
        let mut s = AdamState::new(1, AdamConfig::with_stepsize(0.1));
        s.update(&mut q, &[0.0], 0.5).unwrap();
        assert!((q[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn bytes_round_trip() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        st.update(&mut p, &[0.1, 0.2], 0.0).unwrap();
        let mut buf = Vec::new();
        st.write_into(&mut buf);
        let mut cur = &buf[..];
        assert_eq!(AdamState::read_from(&mut cur).unwrap(), st);
        assert!(cur.is_empty());
    }
}
