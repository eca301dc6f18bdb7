use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to the predicted
/// probabilities. A prediction equal to its label contributes exactly zero.
pub fn bce_loss(predicted: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != labels.len() {
        return Err(Error::Length {
            expected: labels.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("empty prediction vector".into()));
    }
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predicted.len());
    for (&p_raw, &y) in predicted.iter().zip(labels) {
        let p = p_raw.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        if p_raw != y {
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        grad.push((-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Mean over items of the summed squared error, with gradient.
pub fn mse_loss(predicted: &[f64], target: &[f64], items: usize) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(Error::Length {
            expected: target.len(),
            got: predicted.len(),
        });
    }
    let n = items.max(1) as f64;
    let mut loss = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_is_ln2() {
        let (l, _) = bce_loss(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn exact_prediction_is_zero() {
        let (l, _) = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(l, 0.0);
        // Almost-exact predictions stay below the clamp-induced bound.
        let (l, _) = bce_loss(&[1.0 - 1e-12, 1e-12], &[1.0, 0.0]).unwrap();
        assert!(l >= 0.0 && l <= -(1.0 - BCE_EPSILON).ln() + 1e-15);
    }

    #[test]
    fn two_point_reference() {
        // -(ln 0.9 + ln 0.8) / 2
        let (l, g) = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!((l - 0.164_252_033_486_018_1).abs() < 1e-15);
        assert!((g[0] - (-1.0 / 0.9 / 2.0)).abs() < 1e-15);
        assert!((g[1] - (1.0 / 0.8 / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(bce_loss(&[0.5], &[1.0, 0.0]), Err(Error::Length { .. })));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let p = [0.3, 0.85, 0.6];
        let y = [1.0, 0.0, 1.0];
        let (_, g) = bce_loss(&p, &y).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (bce_loss(&a, &y).unwrap().0 - bce_loss(&b, &y).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8 * g[i].abs().max(1.0));
        }
    }
}
