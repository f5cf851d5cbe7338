//! Single-layer LSTM with a hand-written backward pass through time.
//!
//! Gate order throughout: input `i`, forget `f`, output `o`, candidate `g`.
//!
//! ```text
//! i = sigmoid(x W_i + h U_i + b_i)      f = sigmoid(x W_f + h U_f + b_f)
//! o = sigmoid(x W_o + h U_o + b_o)      g = tanh   (x W_g + h U_g + b_g)
//! c' = f .* c + i .* g                  h' = o .* tanh(c')
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matvec_acc, matvec_acc_t, outer_acc, Parameter, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell state for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Per-step intermediates for one sample.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Sequence cache: `steps[b][t]` plus the input shape.
pub struct LstmSequenceCache {
    input_shape: Vec<usize>,
    steps: Vec<Vec<CellCache>>,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_i: Parameter,
    pub w_f: Parameter,
    pub w_o: Parameter,
    pub w_g: Parameter,
    pub u_i: Parameter,
    pub u_f: Parameter,
    pub u_o: Parameter,
    pub u_g: Parameter,
    pub b_i: Parameter,
    pub b_f: Parameter,
    pub b_o: Parameter,
    pub b_g: Parameter,
    input_dim: usize,
    hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bw = (6.0 / (input_dim + hidden) as f64).sqrt();
        let bu = (6.0 / (2 * hidden) as f64).sqrt();
        let w = |name: &str, r: &mut R| {
            Parameter::new(name, Tensor::uniform(vec![input_dim, hidden], bw, r))
        };
        let u = |name: &str, r: &mut R| {
            Parameter::new(name, Tensor::uniform(vec![hidden, hidden], bu, r))
        };
        Self {
            w_i: w("lstm.w_i", rng),
            w_f: w("lstm.w_f", rng),
            w_o: w("lstm.w_o", rng),
            w_g: w("lstm.w_g", rng),
            u_i: u("lstm.u_i", rng),
            u_f: u("lstm.u_f", rng),
            u_o: u("lstm.u_o", rng),
            u_g: u("lstm.u_g", rng),
            b_i: Parameter::new("lstm.b_i", Tensor::zeros(vec![hidden])),
            // Forget gate starts open so early gradients flow through time.
            b_f: Parameter::new("lstm.b_f", Tensor::filled(vec![hidden], 1.0)),
            b_o: Parameter::new("lstm.b_o", Tensor::zeros(vec![hidden])),
            b_g: Parameter::new("lstm.b_g", Tensor::zeros(vec![hidden])),
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step of the six update equations.
    pub fn cell(&self, x_t: &[f64], state: &LstmState) -> Result<(LstmState, CellCache)> {
        if x_t.len() != self.input_dim || state.h.len() != self.hidden || state.c.len() != self.hidden
        {
            return Err(Error::Contract(format!(
                "lstm cell shapes: x {} (want {}), h {} c {} (want {})",
                x_t.len(),
                self.input_dim,
                state.h.len(),
                state.c.len(),
                self.hidden
            )));
        }
        let h = self.hidden;
        let gate = |wp: &Parameter, up: &Parameter, bp: &Parameter| {
            let mut z = bp.value.data().to_vec();
            matvec_acc(x_t, wp.value.data(), &mut z);
            matvec_acc(&state.h, up.value.data(), &mut z);
            z
        };
        let i: Vec<f64> = gate(&self.w_i, &self.u_i, &self.b_i)
            .into_iter()
            .map(sigmoid)
            .collect();
        let f: Vec<f64> = gate(&self.w_f, &self.u_f, &self.b_f)
            .into_iter()
            .map(sigmoid)
            .collect();
        let o: Vec<f64> = gate(&self.w_o, &self.u_o, &self.b_o)
            .into_iter()
            .map(sigmoid)
            .collect();
        let g: Vec<f64> = gate(&self.w_g, &self.u_g, &self.b_g)
            .into_iter()
            .map(f64::tanh)
            .collect();

        let mut c_new = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for k in 0..h {
            c_new[k] = f[k] * state.c[k] + i[k] * g[k];
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o[k] * tanh_c[k];
        }
        Ok((
            LstmState {
                h: h_new,
                c: c_new,
            },
            CellCache {
                x: x_t.to_vec(),
                h_prev: state.h.clone(),
                c_prev: state.c.clone(),
                i,
                f,
                o,
                g,
                tanh_c,
            },
        ))
    }

    /// Run the cell over a `[batch, channels, length]` tensor, feeding the
    /// channel vector at each time position, starting from zero state.
    /// Returns the final hidden states `[batch, hidden]`.
    pub fn forward_sequence(&self, x: &Tensor) -> Result<(Tensor, LstmSequenceCache)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.input_dim {
            return Err(Error::Contract(format!(
                "lstm sequence expects [batch, {}, length], got {shape:?}",
                self.input_dim
            )));
        }
        let (batch, channels, length) = (shape[0], shape[1], shape[2]);
        if length == 0 {
            return Err(Error::Contract("lstm sequence needs length >= 1".into()));
        }

        let mut out = Tensor::zeros(vec![batch, self.hidden]);
        let mut steps = Vec::with_capacity(batch);
        let mut x_t = vec![0.0; channels];
        for b in 0..batch {
            let mut state = LstmState::zeros(self.hidden);
            let mut caches = Vec::with_capacity(length);
            for t in 0..length {
                for c in 0..channels {
                    x_t[c] = x.at3(b, c, t);
                }
                let (next, cache) = self.cell(&x_t, &state)?;
                caches.push(cache);
                state = next;
            }
            out.data_mut()[b * self.hidden..(b + 1) * self.hidden].copy_from_slice(&state.h);
            steps.push(caches);
        }
        Ok((
            out,
            LstmSequenceCache {
                input_shape: shape.to_vec(),
                steps,
            },
        ))
    }

    /// Backward through time from the final-hidden-state cotangent
    /// `[batch, hidden]`; accumulates parameter gradients and returns
    /// the input cotangent `[batch, channels, length]`.
    pub fn backward_sequence(&mut self, cache: &LstmSequenceCache, dh_final: &Tensor) -> Result<Tensor> {
        let (batch, channels, length) = (
            cache.input_shape[0],
            cache.input_shape[1],
            cache.input_shape[2],
        );
        if dh_final.shape() != [batch, self.hidden] {
            return Err(Error::Contract(format!(
                "lstm backward cotangent shape {:?}, want [{batch}, {}]",
                dh_final.shape(),
                self.hidden
            )));
        }
        let h = self.hidden;

        let wv: Vec<Vec<f64>> = [&self.w_i, &self.w_f, &self.w_o, &self.w_g]
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        let uv: Vec<Vec<f64>> = [&self.u_i, &self.u_f, &self.u_o, &self.u_g]
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();

        let mut dw = vec![vec![0.0; channels * h]; 4];
        let mut du = vec![vec![0.0; h * h]; 4];
        let mut db = vec![vec![0.0; h]; 4];
        let mut dx = Tensor::zeros(cache.input_shape.clone());

        for b in 0..batch {
            let mut dh = dh_final.data()[b * h..(b + 1) * h].to_vec();
            let mut dc = vec![0.0; h];
            for t in (0..length).rev() {
                let step = &cache.steps[b][t];
                let mut dzi = vec![0.0; h];
                let mut dzf = vec![0.0; h];
                let mut dzo = vec![0.0; h];
                let mut dzg = vec![0.0; h];
                let mut dc_prev = vec![0.0; h];
                for k in 0..h {
                    let tc = step.tanh_c[k];
                    let do_ = dh[k] * tc;
                    let dck = dc[k] + dh[k] * step.o[k] * (1.0 - tc * tc);
                    let di = dck * step.g[k];
                    let df = dck * step.c_prev[k];
                    let dg = dck * step.i[k];
                    dzi[k] = di * step.i[k] * (1.0 - step.i[k]);
                    dzf[k] = df * step.f[k] * (1.0 - step.f[k]);
                    dzo[k] = do_ * step.o[k] * (1.0 - step.o[k]);
                    dzg[k] = dg * (1.0 - step.g[k] * step.g[k]);
                    dc_prev[k] = dck * step.f[k];
                }

                let mut dh_prev = vec![0.0; h];
                let mut dx_t = vec![0.0; channels];
                for (gate, dz) in [&dzi, &dzf, &dzo, &dzg].iter().enumerate() {
                    for (g, &d) in db[gate].iter_mut().zip(dz.iter()) {
                        *g += d;
                    }
                    outer_acc(&step.x, dz, &mut dw[gate]);
                    outer_acc(&step.h_prev, dz, &mut du[gate]);
                    matvec_acc_t(dz, &wv[gate], &mut dx_t);
                    matvec_acc_t(dz, &uv[gate], &mut dh_prev);
                }
                for c in 0..channels {
                    dx.set3(b, c, t, dx_t[c]);
                }
                dh = dh_prev;
                dc = dc_prev;
            }
        }

        for (gate, param) in [&mut self.w_i, &mut self.w_f, &mut self.w_o, &mut self.w_g]
            .into_iter()
            .enumerate()
        {
            for (g, d) in param.grad_mut().data_mut().iter_mut().zip(&dw[gate]) {
                *g += d;
            }
        }
        for (gate, param) in [&mut self.u_i, &mut self.u_f, &mut self.u_o, &mut self.u_g]
            .into_iter()
            .enumerate()
        {
            for (g, d) in param.grad_mut().data_mut().iter_mut().zip(&du[gate]) {
                *g += d;
            }
        }
        for (gate, param) in [&mut self.b_i, &mut self.b_f, &mut self.b_o, &mut self.b_g]
            .into_iter()
            .enumerate()
        {
            for (g, d) in param.grad_mut().data_mut().iter_mut().zip(&db[gate]) {
                *g += d;
            }
        }
        Ok(dx)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_g,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
        ]
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.w_i, &self.w_f, &self.w_o, &self.w_g, &self.u_i, &self.u_f, &self.u_o,
            &self.u_g, &self.b_i, &self.b_f, &self.b_o, &self.b_g,
        ]
    }

    fn zeroed<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut lstm = Self::new(input_dim, hidden, rng);
        for p in lstm.parameters_mut() {
            p.value.fill(0.0);
        }
        lstm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_half_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::zeroed(2, 3, &mut rng);
        let (state, cache) = lstm.cell(&[0.0, 0.0], &LstmState::zeros(3)).unwrap();
        for k in 0..3 {
            assert_relative_eq!(cache.i[k], 0.5, epsilon = 1e-15);
            assert_relative_eq!(cache.f[k], 0.5, epsilon = 1e-15);
            assert_relative_eq!(cache.o[k], 0.5, epsilon = 1e-15);
            assert_eq!(cache.g[k], 0.0);
            assert_eq!(state.c[k], 0.0);
            assert_eq!(state.h[k], 0.0);
        }
    }

    #[test]
    fn zero_params_with_prior_cell_state() {
        // [DERIVED] c' = 0.5 * 1 = 0.5 and h' = 0.5 * tanh(0.5) ~ 0.23106.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::zeroed(1, 1, &mut rng);
        let state = LstmState {
            h: vec![0.0],
            c: vec![1.0],
        };
        let (next, _) = lstm.cell(&[0.0], &state).unwrap();
        assert_relative_eq!(next.c[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(next.h[0], 0.5 * 0.5f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(next.h[0], 0.23106, epsilon = 1e-5);
    }

    #[test]
    fn gate_ranges_hold_for_random_draws() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let lstm = Lstm::new(3, 4, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let state = LstmState {
                h: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                c: (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            };
            let (next, cache) = lstm.cell(&x, &state).unwrap();
            for k in 0..4 {
                assert!(cache.i[k] > 0.0 && cache.i[k] < 1.0);
                assert!(cache.f[k] > 0.0 && cache.f[k] < 1.0);
                assert!(cache.o[k] > 0.0 && cache.o[k] < 1.0);
                assert!(cache.g[k] > -1.0 && cache.g[k] < 1.0);
                assert!(next.h[k].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn saturated_gates_pass_memory_through() {
        // Forget gate forced open and input gate forced shut: the cell state
        // must ride through every step unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lstm = Lstm::new(2, 3, &mut rng);
        lstm.b_f.value.fill(50.0);
        lstm.b_i.value.fill(-50.0);
        lstm.w_f.value.fill(0.0);
        lstm.u_f.value.fill(0.0);
        lstm.w_i.value.fill(0.0);
        lstm.u_i.value.fill(0.0);
        let mut state = LstmState {
            h: vec![0.1, -0.2, 0.3],
            c: vec![1.5, -0.7, 2.0],
        };
        let c0 = state.c.clone();
        for step in 0..6 {
            let x = [0.3 * step as f64, -0.1];
            let (next, _) = lstm.cell(&x, &state).unwrap();
            state = next;
            for k in 0..3 {
                assert!((state.c[k] - c0[k]).abs() < 1e-12, "step {step}");
            }
        }
    }

    #[test]
    fn sequence_of_length_one_equals_single_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lstm = Lstm::new(3, 4, &mut rng);
        let x = Tensor::uniform(vec![2, 3, 1], 1.0, &mut rng);
        let (h_final, _) = lstm.forward_sequence(&x).unwrap();
        for b in 0..2 {
            let x_t: Vec<f64> = (0..3).map(|c| x.at3(b, c, 0)).collect();
            let (state, _) = lstm.cell(&x_t, &LstmState::zeros(4)).unwrap();
            for k in 0..4 {
                assert_eq!(h_final.at2(b, k), state.h[k]);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_final_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lstm = Lstm::zeroed(2, 3, &mut rng);
        let x = Tensor::uniform(vec![2, 2, 7], 4.0, &mut rng);
        let (h_final, _) = lstm.forward_sequence(&x).unwrap();
        assert!(h_final.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequence_matches_manual_unroll() {
        // [DERIVED] L=3, H=2: apply the cell by hand step by step.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lstm = Lstm::new(2, 2, &mut rng);
        let x = Tensor::uniform(vec![1, 2, 3], 1.0, &mut rng);
        let (h_final, _) = lstm.forward_sequence(&x).unwrap();

        let mut state = LstmState::zeros(2);
        for t in 0..3 {
            let x_t: Vec<f64> = (0..2).map(|c| x.at3(0, c, t)).collect();
            let (next, _) = lstm.cell(&x_t, &state).unwrap();
            state = next;
        }
        for k in 0..2 {
            assert_eq!(h_final.at2(0, k), state.h[k]);
        }
    }

    #[test]
    fn rejects_empty_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lstm = Lstm::new(2, 2, &mut rng);
        assert!(lstm.forward_sequence(&Tensor::zeros(vec![1, 2, 1])).is_ok());
        // A zero-length axis is rejected at tensor construction already.
        assert!(Tensor::new(vec![1, 2, 0], vec![]).is_err());
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let (input_dim, hidden) = (3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lstm = Lstm::new(input_dim, hidden, &mut rng);
        let x = Tensor::uniform(vec![2, input_dim, 5], 1.0, &mut rng);
        let cot = Tensor::uniform(vec![2, hidden], 1.0, &mut rng);

        let base: Vec<Tensor> = lstm.parameters().iter().map(|p| p.value.clone()).collect();
        let mut point: Vec<f64> = base.iter().flat_map(|t| t.data().to_vec()).collect();
        point.extend_from_slice(x.data());

        let rebuild = |p: &[f64]| {
            let mut l = lstm.clone();
            let mut off = 0;
            for (param, src) in l.parameters_mut().into_iter().zip(&base) {
                let n = src.len();
                param.value.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let xt = Tensor::new(vec![2, input_dim, 5], p[off..].to_vec()).unwrap();
            (l, xt)
        };

        let f = |p: &[f64]| {
            let (l, xt) = rebuild(p);
            let (h, _) = l.forward_sequence(&xt)?;
            Ok(h.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum())
        };

        let (mut l, xt) = rebuild(&point);
        let (_, cache) = l.forward_sequence(&xt).unwrap();
        let dx = l.backward_sequence(&cache, &cot).unwrap();
        let mut analytic: Vec<f64> = l
            .parameters()
            .iter()
            .flat_map(|p| p.grad().data().to_vec())
            .collect();
        analytic.extend_from_slice(dx.data());

        let err = finite_diff_check(f, &point, &analytic, 1e-5).unwrap();
        assert!(err <= 1e-4, "lstm gradient error {err}");
    }
}
