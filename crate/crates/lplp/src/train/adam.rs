//! Adam optimizer with the standard constants and bias correction.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, learning_rate: f64) {
    assert_eq!(params.len(), grads.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let m_correction = 1.0 - BETA1.powi(t);
    let v_correction = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / m_correction;
        let v_hat = state.v[i] / v_correction;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![1.5, -0.25];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.0, 0.0], &mut state, 0.1);
        assert_eq!(params, vec![1.5, -0.25]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_roughly_lr_times_sign() {
        // Bias correction makes m_hat/sqrt(v_hat) = sign(g) on step one.
        for &g in &[3.0, -0.004, 1e4] {
            let mut params = vec![0.0];
            let mut state = AdamState::new(1);
            adam_step(&mut params, &[g], &mut state, 0.01);
            let expected = -0.01 * g.signum();
            assert!(
                (params[0] - expected).abs() < 1e-5,
                "g={g}: step {} vs {expected}",
                params[0]
            );
        }
    }

    #[test]
    fn descends_a_parabola() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        for _ in 0..200 {
            let grad = 2.0 * params[0];
            adam_step(&mut params, &[grad], &mut state, 0.1);
        }
        assert!(params[0].abs() < 1e-2, "x = {}", params[0]);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut params = vec![0.3, -0.7, 2.0];
            let mut state = AdamState::new(3);
            for step in 0..50 {
                let grads: Vec<f64> = params.iter().map(|p| p * 0.5 + step as f64 * 1e-3).collect();
                adam_step(&mut params, &grads, &mut state, 0.02);
            }
            params
        };
        assert_eq!(run(), run());
    }
}
