use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step per coordinate.
    pub epsilon: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true derivative is ~0 are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central finite differences of `loss` at
/// `params`. Relative error per coordinate is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    loss: &dyn Fn(&ParamStore) -> f64,
    params: &ParamStore,
    analytic: &ParamStore,
    config: &GradCheckConfig,
) -> GradCheckReport {
    assert!(params.same_layout(analytic), "gradient layout mismatch");
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        passed: true,
    };
    for i in 0..params.num_values() {
        let x = params.flat_get(i);
        probe.flat_set(i, x + config.epsilon);
        let up = loss(&probe);
        probe.flat_set(i, x - config.epsilon);
        let down = loss(&probe);
        probe.flat_set(i, x);
        let numeric = (up - down) / (2.0 * config.epsilon);
        let a = analytic.flat_get(i);
        let denom = a.abs().max(numeric.abs()).max(config.floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if !(rel <= report.max_rel_error) {
            let (name, offset) = params.locate(i);
            report.max_rel_error = rel;
            report.worst = Some((name.to_string(), offset));
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error < config.tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(n: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add(
            "x",
            Tensor {
                shape: vec![n],
                data: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            },
        );
        s
    }

    fn squared_norm(p: &ParamStore) -> f64 {
        p.norm().powi(2)
    }

    #[test]
    fn quadratic_passes_tightly() {
        let x = random_store(6, 1);
        let mut g = x.clone();
        g.scale(2.0);
        let cfg = GradCheckConfig {
            tolerance: 1e-6,
            ..Default::default()
        };
        let report = grad_check(&squared_norm, &x, &g, &cfg);
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 6);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x = random_store(6, 2);
        let mut g = x.clone();
        g.scale(2.0);
        let v = g.flat_get(3);
        g.flat_set(3, v * 1.01 + 0.01);
        let report = grad_check(&squared_norm, &x, &g, &GradCheckConfig::default());
        assert!(!report.passed);
        assert_eq!(report.worst, Some(("x".to_string(), 3)));
    }
}
