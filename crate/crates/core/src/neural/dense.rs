use rand::Rng;

use super::{matvec_add, matvec_t_add, outer_add, Activation, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Affine map followed by an activation: `y = act(W·x + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_matrix(format!("{name}.weight"), n_out, n_in, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[n_out]);
        Dense {
            weight,
            bias,
            n_in,
            n_out,
            activation,
        }
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<DenseCache> {
        if input.len() != self.n_in {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.n_in,
                input.len()
            )));
        }
        let mut pre = store.get(self.bias).data.clone();
        matvec_add(&store.get(self.weight).data, self.n_in, input, &mut pre);
        let output = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok(DenseCache {
            input: input.to_vec(),
            pre,
            output,
        })
    }

    /// Output only, without keeping a cache.
    pub fn infer(&self, store: &ParamStore, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.n_in);
        let mut pre = store.get(self.bias).data.clone();
        matvec_add(&store.get(self.weight).data, self.n_in, input, &mut pre);
        pre.iter_mut().for_each(|z| *z = self.activation.apply(*z));
        pre
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂input`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &DenseCache,
        grad_output: &[f64],
        grads: &mut ParamStore,
    ) -> Result<Vec<f64>> {
        if grad_output.len() != self.n_out {
            return Err(Error::Shape(format!(
                "dense layer has {} outputs, gradient has {}",
                self.n_out,
                grad_output.len()
            )));
        }
        let dz: Vec<f64> = grad_output
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(&g, (&x, &y))| g * self.activation.derivative(x, y))
            .collect();
        outer_add(
            &mut grads.get_mut(self.weight).data,
            self.n_in,
            &dz,
            &cache.input,
        );
        for (b, &d) in grads.get_mut(self.bias).data.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![0.0; self.n_in];
        matvec_t_add(&store.get(self.weight).data, self.n_in, &dz, &mut dx);
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 3, 3, Activation::Identity, &mut rng);
        let w = &mut store.get_mut(layer.weight).data;
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = [0.5, -2.0, 3.25];
        assert_eq!(layer.forward(&store, &x).unwrap().output, x.to_vec());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 2, 2, Activation::Identity, &mut rng);
        store.get_mut(layer.weight).data.fill(0.0);
        store.get_mut(layer.bias).data = vec![0.25, -1.5];
        assert_eq!(
            layer.forward(&store, &[9.0, 9.0]).unwrap().output,
            vec![0.25, -1.5]
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 4, 3, Activation::Tanh, &mut rng);
        assert!(matches!(
            layer.forward(&store, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Tanh, Activation::Identity, Activation::Relu] {
            let mut store = ParamStore::new();
            let layer = Dense::new(&mut store, "d", 4, 3, act, &mut rng);
            for b in store.get_mut(layer.bias).data.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let coef: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &ParamStore| -> f64 {
                let y = layer.forward(p, &x).unwrap().output;
                y.iter().zip(&coef).map(|(a, c)| a * c + 0.5 * a * a).sum()
            };
            let cache = layer.forward(&store, &x).unwrap();
            let dy: Vec<f64> = cache.output.iter().zip(&coef).map(|(y, c)| c + y).collect();
            let mut grads = store.zeros_like();
            layer.backward(&store, &cache, &dy, &mut grads).unwrap();
            let report = grad_check(&loss, &store, &grads, &GradCheckConfig::default());
            assert!(report.passed, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 4, 3, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = layer.forward(&store, &x).unwrap();
        let mut grads = store.zeros_like();
        let dx = layer
            .backward(&store, &cache, &[1.0, 1.0, 1.0], &mut grads)
            .unwrap();
        let eps = 1e-5;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let f = |v: &[f64]| layer.forward(&store, v).unwrap().output.iter().sum::<f64>();
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }
}
