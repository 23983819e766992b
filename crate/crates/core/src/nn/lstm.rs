use rand::Rng;

use super::{axpy, check_len, dot, init_uniform, sigmoid, NnError, ParameterVector, Segment};

/// Recurrent state `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Everything one step needs for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates, laid out `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Single-layer LSTM cell with sigmoid gates and a tanh candidate.
///
/// Layout: `w_x [4H, D]`, `w_h [4H, H]`, `b [4H]`, gate rows ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    input: usize,
    hidden: usize,
    params: ParameterVector,
}

fn layout_for(input: usize, hidden: usize) -> Vec<Segment> {
    vec![Segment::new("w_x", &[4 * hidden, input]), Segment::new("w_h", &[4 * hidden, hidden]), Segment::new("b", &[4 * hidden])]
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        assert!(hidden > 0, "hidden size must be positive");
        LstmCell { input, hidden, params: ParameterVector::zeros(layout_for(input, hidden)) }
    }

    /// Uniform weights scaled by `1/sqrt(D + H)`, forget-gate bias `+1`,
    /// remaining biases zero.
    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let nw = 4 * hidden * (input + hidden);
        let vals = cell.params.values_mut();
        init_uniform(rng, &mut vals[..nw], input + hidden);
        for v in &mut vals[nw + hidden..nw + 2 * hidden] {
            *v = 1.0;
        }
        cell
    }

    pub fn from_params(input: usize, hidden: usize, params: ParameterVector) -> Result<Self, NnError> {
        check_len("lstm parameters", 4 * hidden * (input + hidden + 1), params.len())?;
        Ok(LstmCell { input, hidden, params })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64]) {
        let p = self.params.values();
        let nx = 4 * self.hidden * self.input;
        let nh = 4 * self.hidden * self.hidden;
        (&p[..nx], &p[nx..nx + nh], &p[nx + nh..])
    }

    /// Input projection `W_x x`, reusable across steps that see the same input.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len("lstm input", self.input, x.len())?;
        let (wx, _, _) = self.split();
        let d = self.input;
        Ok((0..4 * self.hidden).map(|r| dot(&wx[r * d..(r + 1) * d], x)).collect())
    }

    /// One step from a precomputed input projection. Bit-identical to
    /// [`LstmCell::step`] on the input that produced `proj`.
    pub fn step_projected(&self, state: &LstmState, proj: &[f64]) -> Result<(LstmState, Vec<f64>), NnError> {
        check_len("lstm projection", 4 * self.hidden, proj.len())?;
        check_len("lstm state", self.hidden, state.h.len())?;
        let hs = self.hidden;
        let (_, wh, b) = self.split();
        let mut gates = Vec::with_capacity(4 * hs);
        for r in 0..4 * hs {
            let pre = b[r] + proj[r] + dot(&wh[r * hs..(r + 1) * hs], &state.h);
            gates.push(if (2 * hs..3 * hs).contains(&r) { pre.tanh() } else { sigmoid(pre) });
        }
        let mut c = Vec::with_capacity(hs);
        let mut h = Vec::with_capacity(hs);
        for j in 0..hs {
            let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
            let cj = f * state.c[j] + i * g;
            c.push(cj);
            h.push(o * cj.tanh());
        }
        Ok((LstmState { h, c }, gates))
    }

    /// Standard LSTM update; returns the new state (its `h` is the output).
    pub fn step(&self, state: &LstmState, x: &[f64]) -> Result<LstmState, NnError> {
        let proj = self.project(x)?;
        Ok(self.step_projected(state, &proj)?.0)
    }

    pub fn step_cached(&self, state: &LstmState, x: &[f64]) -> Result<LstmCache, NnError> {
        let proj = self.project(x)?;
        let (next, gates) = self.step_projected(state, &proj)?;
        let tanh_c = next.c.iter().map(|v| v.tanh()).collect();
        Ok(LstmCache { x: x.to_vec(), h_prev: state.h.clone(), c_prev: state.c.clone(), gates, c: next.c, tanh_c, h: next.h })
    }

    pub fn forward_sequence(&self, init: &LstmState, inputs: &[Vec<f64>]) -> Result<(Vec<LstmCache>, LstmState), NnError> {
        let mut caches = Vec::with_capacity(inputs.len());
        let mut state = init.clone();
        for x in inputs {
            let cache = self.step_cached(&state, x)?;
            state = LstmState { h: cache.h.clone(), c: cache.c.clone() };
            caches.push(cache);
        }
        Ok((caches, state))
    }

    /// Backpropagation through time over cached steps.
    ///
    /// `dh_steps[t]` is the upstream gradient on `h_t` (`None` = all zero);
    /// `d_final` adds a gradient on the final `(h, c)`. Parameter gradients
    /// accumulate into `grad`; input gradients are written to `d_inputs` when
    /// given. Returns the gradient on the initial `(h, c)`.
    pub fn backward_sequence(
        &self,
        caches: &[LstmCache],
        dh_steps: Option<&[Vec<f64>]>,
        d_final: Option<(&[f64], &[f64])>,
        grad: &mut [f64],
        mut d_inputs: Option<&mut [Vec<f64>]>,
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let hs = self.hidden;
        let d = self.input;
        check_len("gradient buffer", self.params.len(), grad.len())?;
        if let Some(dh) = dh_steps {
            check_len("upstream gradient steps", caches.len(), dh.len())?;
        }
        if let Some(dx) = d_inputs.as_deref() {
            check_len("input gradient steps", caches.len(), dx.len())?;
        }
        let (wx, wh, _) = self.split();
        let nx = 4 * hs * d;
        let nh = 4 * hs * hs;
        let (g_wx, rest) = grad.split_at_mut(nx);
        let (g_wh, g_b) = rest.split_at_mut(nh);

        let (mut dh_next, mut dc_next) = match d_final {
            Some((dh, dc)) => {
                check_len("final h gradient", hs, dh.len())?;
                check_len("final c gradient", hs, dc.len())?;
                (dh.to_vec(), dc.to_vec())
            }
            None => (vec![0.0; hs], vec![0.0; hs]),
        };
        let mut dpre = vec![0.0; 4 * hs];
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            if let Some(dh) = dh_steps {
                check_len("upstream gradient", hs, dh[t].len())?;
                axpy(1.0, &dh[t], &mut dh_next);
            }
            let gt = &cache.gates;
            for j in 0..hs {
                let (i, f, g, o) = (gt[j], gt[hs + j], gt[2 * hs + j], gt[3 * hs + j]);
                let dh = dh_next[j];
                let tc = cache.tanh_c[j];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * cache.c_prev[j];
                dc_next[j] = dc * f;
                dpre[j] = d_i * i * (1.0 - i);
                dpre[hs + j] = d_f * f * (1.0 - f);
                dpre[2 * hs + j] = d_g * (1.0 - g * g);
                dpre[3 * hs + j] = d_o * o * (1.0 - o);
            }
            let mut dh_prev = vec![0.0; hs];
            let mut dx = d_inputs.as_ref().map(|_| vec![0.0; d]);
            for r in 0..4 * hs {
                let dp = dpre[r];
                if dp == 0.0 {
                    continue;
                }
                g_b[r] += dp;
                axpy(dp, &cache.x, &mut g_wx[r * d..(r + 1) * d]);
                axpy(dp, &cache.h_prev, &mut g_wh[r * hs..(r + 1) * hs]);
                axpy(dp, &wh[r * hs..(r + 1) * hs], &mut dh_prev);
                if let Some(dx) = dx.as_mut() {
                    axpy(dp, &wx[r * d..(r + 1) * d], dx);
                }
            }
            if let (Some(out), Some(dx)) = (d_inputs.as_deref_mut(), dx) {
                out[t] = dx;
            }
            dh_next = dh_prev;
        }
        Ok((dh_next, dc_next))
    }

    /// Exact BPTT gradient of a sequence run from the zero state, given the
    /// upstream gradient on every step's output.
    pub fn backward(&self, inputs: &[Vec<f64>], upstream: &[Vec<f64>]) -> Result<ParameterVector, NnError> {
        check_len("upstream gradient steps", inputs.len(), upstream.len())?;
        let (caches, _) = self.forward_sequence(&LstmState::zeros(self.hidden), inputs)?;
        let mut grad = ParameterVector::zeros(self.params.layout().to_vec());
        self.backward_sequence(&caches, Some(upstream), None, grad.values_mut(), None)?;
        Ok(grad)
    }
}
