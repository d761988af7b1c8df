use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
///
/// A non-finite gradient aborts the update (parameters and state untouched)
/// and reports the step index that would have been taken.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    ensure(
        params.len() == grads.len()
            && params.len() == state.first_moment.len()
            && params.len() == state.second_moment.len(),
        || "adam: params, grads and moments differ in length".into(),
    )?;
    ensure(
        (0.0..1.0).contains(&cfg.beta1) && (0.0..1.0).contains(&cfg.beta2),
        || format!("adam: betas must lie in [0, 1), got {} / {}", cfg.beta1, cfg.beta2),
    )?;
    let step = state.step_count + 1;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            step: step as usize,
            message: format!("non-finite gradient at parameter {i}"),
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    state.step_count = step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.5, -2.0, 0.25];
        let mut st = AdamState::new(3);
        for _ in 0..50 {
            adam_step(&mut p, &[0.0; 3], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
        assert_eq!(st.step_count, 50);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2; after bias correction m^ = g, v^ = g^2,
        // so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default();
        for g in [0.3, -4.0, 1e-3] {
            let mut p = [2.0];
            let mut st = AdamState::new(1);
            adam_step(&mut p, &[g], &mut st, &cfg).unwrap();
            let m = (1.0 - 0.9) * g;
            let v = (1.0 - 0.999) * g * g;
            let m_hat = m / (1.0 - 0.9);
            let v_hat = v / (1.0 - 0.999);
            let expected = 2.0 - 1e-3 * m_hat / (f64::sqrt(v_hat) + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
            let moved = 2.0 - p[0];
            assert!((moved - 1e-3 * g.signum()).abs() < 1e-3 * 1e-4);
        }
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let cfg = AdamConfig::default();
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        let mut prev = p[0];
        for _ in 0..100 {
            adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let cfg = AdamConfig::default();
        let mut p = [0.0, 0.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[1.0, 1.0], &mut st, &cfg).unwrap();
        let err = adam_step(&mut p, &[1.0, f64::NAN], &mut st, &cfg).unwrap_err();
        match err {
            Error::Training { step, .. } => assert_eq!(step, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step_count, 1);
    }
}
