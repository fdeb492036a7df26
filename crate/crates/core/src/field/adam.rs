//! Adaptive-moment optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update. Gradients must already be checked finite.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m as f64 / c1;
            let v_hat = *v as f64 / c2;
            *p -= (lr * m_hat / (v_hat.sqrt() + EPSILON)) as f32;
        }
    }
}

/// Exponential interpolation from `initial` to `final_lr` over `total` steps.
pub fn exponential_lr(initial: f64, final_lr: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return initial;
    }
    let u = step as f64 / (total - 1) as f64;
    initial * (final_lr / initial).powf(u.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_from_fresh_state_leave_params() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0f32, -2.0, 0.5];
        s.update(&mut p, &[0.0; 3], 1e-2);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradients_decay_moments() {
        let mut s = AdamState::new(1);
        let mut p = vec![0.0f32];
        s.update(&mut p, &[2.0], 1e-3);
        let (m, v) = (s.m[0], s.v[0]);
        s.update(&mut p, &[0.0], 1e-3);
        assert!((s.m[0] - 0.9 * m).abs() < 1e-7);
        assert!((s.v[0] - 0.999 * v).abs() < 1e-7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0f32, -0.02, 150.0] {
            let mut s = AdamState::new(1);
            let mut p = vec![1.0f32];
            s.update(&mut p, &[g], 1e-3);
            let delta = p[0] as f64 - 1.0;
            assert!((delta + 1e-3 * g.signum() as f64).abs() < 1e-6, "g = {g}, delta = {delta}");
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(exponential_lr(5e-4, 5e-5, 0, 100), 5e-4);
        assert!((exponential_lr(5e-4, 5e-5, 99, 100) - 5e-5).abs() < 1e-15);
        let mid = exponential_lr(1.0, 0.01, 50, 101);
        assert!((mid - 0.1).abs() < 1e-12);
    }
}
