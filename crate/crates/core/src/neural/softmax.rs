use crate::error::{Error, Result};

/// Softmax over unmasked entries; masked entries get probability exactly 0.
/// `masked[i] == true` excludes entry `i`.
pub fn masked_softmax(logits: &[f64], masked: &[bool]) -> Result<Vec<f64>> {
    let max = unmasked_max(logits, masked)?;
    let mut p: Vec<f64> = logits
        .iter()
        .zip(masked)
        .map(|(&l, &m)| if m { 0.0 } else { (l - max).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Ok(p)
}

fn unmasked_max(logits: &[f64], masked: &[bool]) -> Result<f64> {
    if logits.len() != masked.len() {
        return Err(Error::Shape(format!(
            "{} logits with {} mask entries",
            logits.len(),
            masked.len()
        )));
    }
    let max = logits
        .iter()
        .zip(masked)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Input("every entry is masked".into()));
    }
    if !max.is_finite() {
        return Err(Error::Numeric(format!("non-finite logit {max}")));
    }
    Ok(max)
}

/// Log-probabilities over unmasked entries, `-∞` on masked ones.
pub fn masked_log_softmax(logits: &[f64], masked: &[bool]) -> Result<Vec<f64>> {
    let max = unmasked_max(logits, masked)?;
    let sum: f64 = logits
        .iter()
        .zip(masked)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    Ok(logits
        .iter()
        .zip(masked)
        .map(|(&l, &m)| if m { f64::NEG_INFINITY } else { l - log_z })
        .collect())
}

/// Gradient of `log p[chosen]` with respect to the logits, scaled by `scale`:
/// `scale · (1[i = chosen] − p_i)`, zero on masked entries.
pub fn log_softmax_backward(probs: &[f64], chosen: usize, scale: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| scale * ((i == chosen) as u8 as f64 - p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_split_evenly() {
        assert_eq!(
            masked_softmax(&[1.0, 1.0], &[false, false]).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = masked_softmax(&[0.0, 1000.0], &[false, false]).unwrap();
        assert!(p[0] < 1e-300);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn masked_entry_is_exactly_zero() {
        let p = masked_softmax(&[3.0, 1.0, 2.0], &[true, false, false]).unwrap();
        let e1 = 1f64.exp();
        let e2 = 2f64.exp();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((p[2] - e2 / (e1 + e2)).abs() < 1e-15);
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(masked_softmax(&[1.0, 2.0], &[true, true]).is_err());
    }

    proptest! {
        #[test]
        fn is_a_distribution(
            entries in prop::collection::vec((-50.0f64..50.0, any::<bool>()), 1..20)
        ) {
            let logits: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let mut masked: Vec<bool> = entries.iter().map(|e| e.1).collect();
            masked[0] = false;
            let p = masked_softmax(&logits, &masked).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            for (pi, &m) in p.iter().zip(&masked) {
                prop_assert!(*pi >= 0.0);
                if m { prop_assert_eq!(*pi, 0.0); }
            }
        }
    }
}
