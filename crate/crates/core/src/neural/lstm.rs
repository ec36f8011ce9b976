use rand::Rng;

use super::{matvec_add, matvec_t_add, outer_add, sigmoid, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Single-layer LSTM cell. Gate rows are stacked as input, forget, cell,
/// output, each `hidden` rows tall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    input: Vec<f64>,
    prev: LstmState,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        LstmCell {
            w_input: store.add_matrix(format!("{name}.w_input"), 4 * hidden, n_in, rng),
            w_hidden: store.add_matrix(format!("{name}.w_hidden"), 4 * hidden, hidden, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[4 * hidden]),
            n_in,
            hidden,
        }
    }

    /// One recurrent update. The returned state is what the caller threads
    /// into the next step.
    pub fn step(
        &self,
        store: &ParamStore,
        input: &[f64],
        state: &LstmState,
    ) -> Result<(LstmState, LstmCache)> {
        let d = self.hidden;
        if input.len() != self.n_in || state.h.len() != d || state.c.len() != d {
            return Err(Error::Shape(format!(
                "lstm expects input {} and state {d}, got input {} and state {}/{}",
                self.n_in,
                input.len(),
                state.h.len(),
                state.c.len()
            )));
        }
        let mut z = store.get(self.bias).data.clone();
        matvec_add(&store.get(self.w_input).data, self.n_in, input, &mut z);
        matvec_add(&store.get(self.w_hidden).data, d, &state.h, &mut z);
        let i: Vec<f64> = z[..d].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[d..2 * d].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * d..3 * d].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * d..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..d).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..d).map(|k| o[k] * tanh_c[k]).collect();
        let next = LstmState { h, c: c.clone() };
        let cache = LstmCache {
            input: input.to_vec(),
            prev: state.clone(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
        };
        Ok((next, cache))
    }

    /// Back-propagates `∂L/∂h'` and `∂L/∂c'` through one step. Returns
    /// `(∂L/∂input, ∂L/∂h, ∂L/∂c)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LstmCache,
        dh_next: &[f64],
        dc_next: &[f64],
        grads: &mut ParamStore,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.hidden;
        let mut dz = vec![0.0; 4 * d];
        let mut dc_prev = vec![0.0; d];
        for k in 0..d {
            let o = cache.o[k];
            let tc = cache.tanh_c[k];
            let dc = dc_next[k] + dh_next[k] * o * (1.0 - tc * tc);
            let (i, f, g) = (cache.i[k], cache.f[k], cache.g[k]);
            dz[k] = dc * g * i * (1.0 - i);
            dz[d + k] = dc * cache.prev.c[k] * f * (1.0 - f);
            dz[2 * d + k] = dc * i * (1.0 - g * g);
            dz[3 * d + k] = dh_next[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        outer_add(
            &mut grads.get_mut(self.w_input).data,
            self.n_in,
            &dz,
            &cache.input,
        );
        outer_add(
            &mut grads.get_mut(self.w_hidden).data,
            d,
            &dz,
            &cache.prev.h,
        );
        for (b, &v) in grads.get_mut(self.bias).data.iter_mut().zip(&dz) {
            *b += v;
        }
        let mut dx = vec![0.0; self.n_in];
        matvec_t_add(&store.get(self.w_input).data, self.n_in, &dz, &mut dx);
        let mut dh_prev = vec![0.0; d];
        matvec_t_add(&store.get(self.w_hidden).data, d, &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        store.fill_zero();
        let (next, _) = cell.step(&store, &[0.0; 3], &LstmState::zeros(4)).unwrap();
        assert_eq!(next, LstmState::zeros(4));
    }

    #[test]
    fn repeated_inputs_give_deterministic_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng);
        let run = || {
            let mut s = LstmState::zeros(3);
            let mut traj = Vec::new();
            for _ in 0..5 {
                s = cell.step(&store, &[0.3, -0.7], &s).unwrap().0;
                traj.push(s.h.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng);
        assert!(cell.step(&store, &[0.0; 3], &LstmState::zeros(3)).is_err());
        assert!(cell.step(&store, &[0.0; 2], &LstmState::zeros(4)).is_err());
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        for b in store.get_mut(cell.bias).data.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let init = LstmState {
            h: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
            c: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &ParamStore| -> f64 {
            let mut s = init.clone();
            let mut total = 0.0;
            for x in &xs {
                s = cell.step(p, x, &s).unwrap().0;
                total += s.h.iter().zip(&coef).map(|(h, c)| h * c).sum::<f64>();
            }
            total + s.c.iter().sum::<f64>()
        };
        let mut caches = Vec::new();
        let mut s = init.clone();
        for x in &xs {
            let (n, c) = cell.step(&store, x, &s).unwrap();
            caches.push(c);
            s = n;
        }
        let mut grads = store.zeros_like();
        let mut dh = vec![0.0; 4];
        let mut dc = vec![1.0; 4];
        for cache in caches.iter().rev() {
            let dh_total: Vec<f64> = dh.iter().zip(&coef).map(|(a, b)| a + b).collect();
            let (_, dh_prev, dc_prev) = cell.backward(&store, cache, &dh_total, &dc, &mut grads);
            dh = dh_prev;
            dc = dc_prev;
        }
        let report = grad_check(&loss, &store, &grads, &GradCheckConfig::default());
        assert!(report.passed, "{report:?}");
    }
}
