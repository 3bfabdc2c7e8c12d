//! Adaptive-moment (Adam) optimizer with bias correction.

use super::Tensor2;
use crate::error::{Error, Result};

/// First/second-moment accumulators for a fixed list of parameters,
/// addressed by position in the model's canonical parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Conventional constants; only the learning rate is a tuning knob.
    pub fn new(learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            first: shapes.iter().map(|&(r, c)| Tensor2::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Tensor2::zeros(r, c)).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update in place. `params` and `grads`
    /// must be parallel to the shapes this state was built with.
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dimension(
                "adam_step",
                format!(
                    "state tracks {} parameters, got {} params / {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let p = &mut *params[i];
            let g = grads[i];
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::dimension(
                    "adam_step",
                    format!(
                        "parameter {i}: param {:?}, grad {:?}, moments {:?}",
                        p.shape(),
                        g.shape(),
                        self.first[i].shape()
                    ),
                ));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor2::filled(2, 3, 1.5);
        let g = Tensor2::zeros(2, 3);
        let mut state = AdamState::new(0.01, &[(2, 3)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.5));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        // With constant gradient g, the bias-corrected first step is
        // lr * g / (|g| + eps), magnitude ~ lr regardless of g.
        for g0 in [0.5, -3.0, 40.0] {
            let mut p = Tensor2::zeros(1, 4);
            let g = Tensor2::filled(1, 4, g0);
            let mut state = AdamState::new(3e-3, &[(1, 4)]);
            state.step(&mut [&mut p], &[&g]).unwrap();
            for &v in p.data() {
                assert!(
                    (v.abs() - 3e-3).abs() < 1e-6,
                    "step magnitude {v} for gradient {g0}"
                );
                assert_eq!(v < 0.0, g0 > 0.0);
            }
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = Tensor2::filled(2, 2, 0.3);
            let mut state = AdamState::new(1e-2, &[(2, 2)]);
            for k in 1..=10 {
                let g = Tensor2::filled(2, 2, 0.1 * k as f64);
                state.step(&mut [&mut p], &[&g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut p = Tensor2::zeros(2, 2);
        let g = Tensor2::zeros(3, 2);
        let mut state = AdamState::new(1e-2, &[(2, 2)]);
        let err = state.step(&mut [&mut p], &[&g]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
