use super::{NumericError, Result};

/// Lower bound applied to the true-class probability before taking the log.
pub const PROB_CLAMP: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-6;

/// Negative log-likelihood of `label` under `probs`.
///
/// Returns the loss and its gradient with respect to `probs`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(NumericError::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > NORMALIZATION_TOL || probs.iter().any(|&p| p < 0.0) {
        return Err(NumericError::NotNormalized { sum });
    }
    let p = probs[label];
    let mut grad = vec![0.0; probs.len()];
    if p > PROB_CLAMP {
        grad[label] = -1.0 / p;
    }
    Ok((-p.max(PROB_CLAMP).ln(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let mut probs = vec![0.0; 5];
        probs[3] = 1.0 - 1e-12;
        let (loss, _) = cross_entropy(&probs, 3).unwrap();
        assert!(loss < 1e-11);
    }

    #[test]
    fn uniform_probs_give_ln5() {
        for label in 0..5 {
            let (loss, _) = cross_entropy(&[0.2; 5], label).unwrap();
            assert!((loss - 5f64.ln()).abs() < 1e-12);
            assert!((loss - 1.6094).abs() < 1e-4);
        }
    }

    #[test]
    fn direct_evaluation() {
        let (loss, grad) = cross_entropy(&[0.7, 0.1, 0.1, 0.05, 0.05], 0).unwrap();
        assert!((loss - 0.35667).abs() < 1e-5);
        assert!((loss + 0.7f64.ln()).abs() < 1e-15);
        assert!((grad[0] + 1.0 / 0.7).abs() < 1e-12);
        assert!(grad[1..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unnormalised_input_rejected() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5, 0.5], 0),
            Err(NumericError::NotNormalized { .. })
        ));
    }

    #[test]
    fn zero_probability_is_clamped() {
        let (loss, _) = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((loss - 1e-12f64.ln().abs()).abs() < 1e-9);
    }
}
