//! ADAM optimizer with stepped exponential learning-rate decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative decay applied every `decay_interval` steps.
    pub decay_rate: f64,
    pub decay_interval: u64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_rate: 0.98,
            decay_interval: 10_000,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Learning rate after decay at the current step count.
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate * self.decay_rate.powi((self.step / self.decay_interval) as i32)
    }

    /// One ADAM update over a set of parameter tensors.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::config("adam: parameter/gradient count mismatch"));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.len() != g.len() {
                return Err(Error::config("adam: parameter/gradient shape mismatch"));
            }
        }
        let lr = self.effective_learning_rate();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step has magnitude ~lr in the sign of g
        let mut state = AdamState::new(0.001);
        let mut params = vec![vec![1.0, -2.0, 0.5]];
        let grads = vec![vec![0.3, -7.0, 0.0001]];
        state.step(&mut params, &grads).unwrap();
        let expect = [1.0 - 0.001, -2.0 + 0.001, 0.5 - 0.001];
        for (p, e) in params[0].iter().zip(expect.iter()) {
            assert!((p - e).abs() < 1e-5, "{p} vs {e}");
        }
    }

    #[test]
    fn zero_gradients_are_identity() {
        let mut state = AdamState::new(0.01);
        let mut params = vec![vec![1.0, 2.0], vec![3.0]];
        let grads = vec![vec![0.0, 0.0], vec![0.0]];
        for _ in 0..50 {
            state.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, vec![vec![1.0, 2.0], vec![3.0]]);
    }

    #[test]
    fn decay_schedule() {
        let mut state = AdamState::new(0.001);
        assert!((state.effective_learning_rate() - 0.001).abs() < 1e-15);
        state.step = 9_999;
        assert!((state.effective_learning_rate() - 0.001).abs() < 1e-15);
        state.step = 10_000;
        assert!((state.effective_learning_rate() - 0.00098).abs() < 1e-15);
        state.step = 20_000;
        assert!((state.effective_learning_rate() - 0.001 * 0.98 * 0.98).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(0.001);
        let mut params = vec![vec![1.0, 2.0]];
        assert!(state.step(&mut params, &[vec![1.0]]).is_err());
        assert!(state.step(&mut params, &[]).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut state = AdamState::new(0.05);
        let mut params = vec![vec![3.0, -4.0]];
        for _ in 0..2000 {
            let grads = vec![params[0].iter().map(|x| 2.0 * x).collect()];
            state.step(&mut params, &grads).unwrap();
        }
        assert!(params[0].iter().all(|x| x.abs() < 1e-3), "{:?}", params);
    }
}
