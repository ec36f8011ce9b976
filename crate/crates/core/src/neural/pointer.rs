use rand::Rng;

use super::{dot, matvec_add, matvec_t_add, outer_add, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Additive attention pointer: `score_i = vᵀ tanh(W_ref·r_i + W_q·q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointer {
    pub w_ref: ParamId,
    pub w_q: ParamId,
    pub v: ParamId,
    pub dim: usize,
}

/// Values needed to back-propagate one scoring call.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerCache {
    query: Vec<f64>,
    /// `tanh(W_ref·r_i + W_q·q)` for unmasked references, empty otherwise.
    activations: Vec<Vec<f64>>,
}

impl Pointer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let w_ref = store.add_matrix(format!("{name}.w_ref"), dim, dim, rng);
        let w_q = store.add_matrix(format!("{name}.w_q"), dim, dim, rng);
        let v = store.add_matrix(format!("{name}.v"), 1, dim, rng);
        Pointer { w_ref, w_q, v, dim }
    }

    /// `W_ref·r_i` for every reference. References do not change while a
    /// window is decoded, so this is computed once per decode.
    pub fn project_refs(&self, store: &ParamStore, refs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let w = &store.get(self.w_ref).data;
        refs.iter()
            .map(|r| {
                if r.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "reference has dimension {}, pointer expects {}",
                        r.len(),
                        self.dim
                    )));
                }
                let mut out = vec![0.0; self.dim];
                matvec_add(w, self.dim, r, &mut out);
                Ok(out)
            })
            .collect()
    }

    /// Scores against pre-projected references. Masked entries get `-∞`.
    pub fn scores_projected(
        &self,
        store: &ParamStore,
        query: &[f64],
        projected: &[Vec<f64>],
        masked: &[bool],
    ) -> Result<(Vec<f64>, PointerCache)> {
        if masked.len() != projected.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} references",
                masked.len(),
                projected.len()
            )));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dimension {}, pointer expects {}",
                query.len(),
                self.dim
            )));
        }
        let mut wq = vec![0.0; self.dim];
        matvec_add(&store.get(self.w_q).data, self.dim, query, &mut wq);
        let v = &store.get(self.v).data;
        let mut logits = Vec::with_capacity(projected.len());
        let mut activations = Vec::with_capacity(projected.len());
        for (p, &m) in projected.iter().zip(masked) {
            if m {
                logits.push(f64::NEG_INFINITY);
                activations.push(Vec::new());
                continue;
            }
            let t: Vec<f64> = p.iter().zip(&wq).map(|(a, b)| (a + b).tanh()).collect();
            logits.push(dot(v, &t));
            activations.push(t);
        }
        Ok((
            logits,
            PointerCache {
                query: query.to_vec(),
                activations,
            },
        ))
    }

    /// Full scoring call, projecting the references on the fly.
    pub fn scores(
        &self,
        store: &ParamStore,
        query: &[f64],
        refs: &[Vec<f64>],
        masked: &[bool],
    ) -> Result<(Vec<f64>, PointerCache)> {
        let projected = self.project_refs(store, refs)?;
        self.scores_projected(store, query, &projected, masked)
    }

    /// Given `∂L/∂logits` (ignored on masked entries), accumulates gradients
    /// for `W_q` and `v`, adds `∂L/∂(W_ref·r_i)` into `d_projected`, and
    /// returns `∂L/∂q`.
    pub fn backward_projected(
        &self,
        store: &ParamStore,
        cache: &PointerCache,
        d_logits: &[f64],
        d_projected: &mut [Vec<f64>],
        grads: &mut ParamStore,
    ) -> Vec<f64> {
        let d = self.dim;
        let v = store.get(self.v).data.clone();
        let mut da_sum = vec![0.0; d];
        for (i, t) in cache.activations.iter().enumerate() {
            if t.is_empty() || d_logits[i] == 0.0 {
                continue;
            }
            let g = d_logits[i];
            {
                let dv = &mut grads.get_mut(self.v).data;
                for k in 0..d {
                    dv[k] += g * t[k];
                }
            }
            for k in 0..d {
                let da = g * v[k] * (1.0 - t[k] * t[k]);
                d_projected[i][k] += da;
                da_sum[k] += da;
            }
        }
        outer_add(&mut grads.get_mut(self.w_q).data, d, &da_sum, &cache.query);
        let mut dq = vec![0.0; d];
        matvec_t_add(&store.get(self.w_q).data, d, &da_sum, &mut dq);
        dq
    }

    /// Back-propagates accumulated `∂L/∂(W_ref·r_i)` into `W_ref` and
    /// returns `∂L/∂r_i`.
    pub fn backward_refs(
        &self,
        store: &ParamStore,
        refs: &[Vec<f64>],
        d_projected: &[Vec<f64>],
        grads: &mut ParamStore,
    ) -> Vec<Vec<f64>> {
        let d = self.dim;
        let w = &store.get(self.w_ref).data;
        refs.iter()
            .zip(d_projected)
            .map(|(r, dp)| {
                outer_add(&mut grads.get_mut(self.w_ref).data, d, dp, r);
                let mut dr = vec![0.0; d];
                matvec_t_add(w, d, dp, &mut dr);
                dr
            })
            .collect()
    }
}
