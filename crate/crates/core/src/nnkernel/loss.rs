use crate::error::{Error, Result};

/// Probability clip applied before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

fn check(p: &[f64], y: &[f64]) -> Result<()> {
    if p.is_empty() || y.is_empty() {
        return Err(Error::Argument("loss over empty vectors".into()));
    }
    if p.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions against {} labels",
            p.len(),
            y.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument(format!("label {bad} is not binary")));
    }
    Ok(())
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Mean binary cross-entropy with probabilities clipped to `[ε, 1−ε]`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    check(p, y)?;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clip(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// `∂loss/∂p` for each prediction. Zero where the clip is active.
pub fn bce_grad(p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check(p, y)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if !(PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p) {
                0.0
            } else {
                -(y / p - (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_costs_ln2() {
        let l = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_is_near_zero() {
        let l = bce_loss(&[1.0 - PROB_EPSILON], &[1.0]).unwrap();
        assert!((0.0..1e-6).contains(&l));
    }

    #[test]
    fn two_sample_mean() {
        let l = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        let expected = -0.5 * (0.9f64.ln() + 0.9f64.ln());
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.105_361).abs() < 1e-6);
    }

    #[test]
    fn extreme_probabilities_stay_finite() {
        let l = bce_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(l.is_finite());
        assert_eq!(bce_grad(&[0.0], &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn empty_and_mismatched_inputs_rejected() {
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Argument(_))));
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
        assert!(bce_loss(&[0.5], &[0.3]).is_err());
    }
}
