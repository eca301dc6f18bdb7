use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(Error::Length { expected: n, got: len });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_fresh_state_is_noop() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, 0.1);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2, 0.01);
        for _ in 0..50 {
            adam_step(&mut p, &[2.0, -0.5], &mut s).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
        assert_eq!(s.step_count, 50);
    }

    /// Independent scalar Adam recurrence, written out long-hand.
    fn reference_adam(mut w: f64, steps: usize, lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t as f64));
            let vh = v / (1.0 - b2.powf(t as f64));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn quadratic_matches_reference_recurrence() {
        let expected = reference_adam(0.0, 10, 0.1);
        let mut w = vec![0.0];
        let mut s = AdamState::new(1, 0.1);
        let mut prev = 3.0;
        for want in expected {
            let g = 2.0 * (w[0] - 3.0);
            adam_step(&mut w, &[g], &mut s).unwrap();
            assert!((w[0] - want).abs() < 1e-14);
            let dist = (w[0] - 3.0).abs();
            assert!(dist < prev);
            prev = dist;
        }
    }

    #[test]
    fn length_mismatch() {
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s).is_err());
    }
}
