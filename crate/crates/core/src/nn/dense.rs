use rand::Rng;

use super::{axpy, check_len, dot, init_uniform, NnError, ParameterVector, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected net: tanh on every hidden layer, configurable output.
///
/// Layout: `w0, b0, w1, b1, ...` where `w{l}` has shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    sizes: Vec<usize>,
    output: Activation,
    params: ParameterVector,
    offsets: Vec<(usize, usize)>,
}

/// Per-layer activations of one forward pass; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least the input layer")
    }
}

fn layout_for(sizes: &[usize]) -> Vec<Segment> {
    let mut segs = Vec::with_capacity(2 * sizes.len());
    for (l, w) in sizes.windows(2).enumerate() {
        segs.push(Segment::new(format!("w{l}"), &[w[1], w[0]]));
        segs.push(Segment::new(format!("b{l}"), &[w[1]]));
    }
    segs
}

impl FeedForwardNet {
    /// Net with all weights and biases zero.
    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        assert!(sizes.len() >= 2, "a net needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let params = ParameterVector::zeros(layout_for(sizes));
        Self::assemble(sizes.to_vec(), output, params)
    }

    pub fn random<R: Rng>(sizes: &[usize], output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, output);
        for l in 0..net.sizes.len() - 1 {
            let fan_in = net.sizes[l];
            let (wo, bo) = net.offsets[l];
            let end = bo + net.sizes[l + 1];
            init_uniform(rng, &mut net.params.values_mut()[wo..end], fan_in);
        }
        net
    }

    pub fn from_params(sizes: &[usize], output: Activation, params: ParameterVector) -> Result<Self, NnError> {
        let expected: usize = layout_for(sizes).iter().map(Segment::size).sum();
        check_len("feed-forward parameters", expected, params.len())?;
        Ok(Self::assemble(sizes.to_vec(), output, params))
    }

    fn assemble(sizes: Vec<usize>, output: Activation, params: ParameterVector) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for w in sizes.windows(2) {
            let wo = off;
            off += w[0] * w[1];
            offsets.push((wo, off));
            off += w[1];
        }
        FeedForwardNet { sizes, output, params, offsets }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<(), NnError> {
        check_len("feed-forward parameters", self.params.len(), values.len())?;
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            Activation::Tanh
        }
    }

    fn layer_forward(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (wo, bo) = self.offsets[l];
        let p = self.params.values();
        let act = self.activation_of(l);
        out.clear();
        for r in 0..n_out {
            let row = &p[wo + r * n_in..wo + (r + 1) * n_in];
            out.push(act.apply(p[bo + r] + dot(row, x)));
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            self.layer_forward(l, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace, NnError> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        for l in 0..self.sizes.len() - 1 {
            let mut out = Vec::with_capacity(self.sizes[l + 1]);
            self.layer_forward(l, &layers[l], &mut out);
            layers.push(out);
        }
        Ok(ForwardTrace { layers })
    }

    /// Accumulates `dL/dparams` into `grad` and optionally writes `dL/dinput`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        d_output: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut [f64]>,
    ) -> Result<(), NnError> {
        check_len("upstream gradient", self.output_dim(), d_output.len())?;
        check_len("gradient buffer", self.params.len(), grad.len())?;
        check_len("trace depth", self.sizes.len(), trace.layers.len())?;
        let p = self.params.values();
        let nl = self.sizes.len() - 1;
        let mut delta: Vec<f64> = d_output.to_vec();
        let mut d_input = d_input;
        for l in (0..nl).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation_of(l);
            let y = &trace.layers[l + 1];
            for (d, &yv) in delta.iter_mut().zip(y) {
                *d *= act.derivative_from_output(yv);
            }
            let x = &trace.layers[l];
            let (wo, bo) = self.offsets[l];
            for r in 0..n_out {
                grad[bo + r] += delta[r];
                axpy(delta[r], x, &mut grad[wo + r * n_in..wo + (r + 1) * n_in]);
            }
            if l > 0 || d_input.is_some() {
                let mut d_x = vec![0.0; n_in];
                for r in 0..n_out {
                    axpy(delta[r], &p[wo + r * n_in..wo + (r + 1) * n_in], &mut d_x);
                }
                if l == 0 {
                    if let Some(di) = d_input.take() {
                        check_len("input gradient buffer", n_in, di.len())?;
                        di.copy_from_slice(&d_x);
                    }
                }
                delta = d_x;
            }
        }
        Ok(())
    }

    /// Analytic gradient of the forward computation for one input.
    pub fn backward(&self, input: &[f64], d_output: &[f64]) -> Result<(ParameterVector, Vec<f64>), NnError> {
        let trace = self.forward_trace(input)?;
        let mut grad = ParameterVector::zeros(self.params.layout().to_vec());
        let mut d_input = vec![0.0; self.input_dim()];
        self.backward_into(&trace, d_output, grad.values_mut(), Some(&mut d_input))?;
        Ok((grad, d_input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_single_layer() {
        let mut net = FeedForwardNet::zeros(&[2, 2], Activation::Linear);
        net.set_values(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let net = FeedForwardNet::zeros(&[3, 4, 2], Activation::Linear);
        let trace = net.forward_trace(&[1.0, -2.0, 5.0]).unwrap();
        assert!(trace.layers[1].iter().all(|&h| h == 0.0));
    }

    #[test]
    fn dimension_mismatch_reports_sizes() {
        let net = FeedForwardNet::zeros(&[3, 2], Activation::Linear);
        let err = net.forward(&[1.0]).unwrap_err();
        assert_eq!(err, NnError::Dimension { what: "network input", expected: 3, got: 1 });
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FeedForwardNet::random(&[3, 5, 3], Activation::Linear, &mut rng);
        let (g, dx) = net.backward(&[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_tanh_gradient_at_zero() {
        // y = tanh(w x), w = 0, x = 1: dy/dw = tanh'(0) * x = 1
        let net = FeedForwardNet::zeros(&[1, 1], Activation::Tanh);
        let (g, _) = net.backward(&[1.0], &[1.0]).unwrap();
        assert_eq!(g.segment("w0").unwrap(), &[1.0]);
        assert_eq!(g.segment("b0").unwrap(), &[1.0]);
    }

    #[test]
    fn hidden_activations_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = FeedForwardNet::random(&[4, 8, 2], Activation::Linear, &mut rng);
        for k in 0..20 {
            let x: Vec<f64> = (0..4).map(|i| ((k * 4 + i) as f64 * 0.37).sin() * 3.0).collect();
            let t = net.forward_trace(&x).unwrap();
            assert!(t.layers[1].iter().all(|h| h.abs() < 1.0));
            assert_eq!(t.output().len(), 2);
        }
    }
}
