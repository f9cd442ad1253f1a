//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::{s, Gradients, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: one first/second moment buffer per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub hyper: AdamParams,
    pub first_moment: Vec<Vec<F>>,
    pub second_moment: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Fresh state with buffers shaped after `group_lengths`.
    pub fn new(hyper: AdamParams, group_lengths: &[usize]) -> Self {
        AdamState {
            step: 0,
            hyper,
            first_moment: group_lengths.iter().map(|&n| vec![F::zero(); n]).collect(),
            second_moment: group_lengths.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    /// One update:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &Gradients<F>) -> Result<()> {
        let grad_groups = grads.groups();
        if params.len() != grad_groups.len() || params.len() != self.first_moment.len() {
            return Err(Error::DimMismatch {
                context: "adam parameter groups".into(),
                left: vec![params.len()],
                right: vec![self.first_moment.len()],
            });
        }
        self.step += 1;
        let b1 = s::<F>(self.hyper.beta1);
        let b2 = s::<F>(self.hyper.beta2);
        let lr = s::<F>(self.hyper.learning_rate);
        let eps = s::<F>(self.hyper.epsilon);
        let bias1 = F::one() - s::<F>(self.hyper.beta1.powi(self.step as i32));
        let bias2 = F::one() - s::<F>(self.hyper.beta2.powi(self.step as i32));

        for (g_idx, group) in params.iter_mut().enumerate() {
            let g = grad_groups[g_idx];
            if g.len() != group.len() {
                return Err(Error::DimMismatch {
                    context: format!("adam group {g_idx}"),
                    left: vec![group.len()],
                    right: vec![g.len()],
                });
            }
            let m = &mut self.first_moment[g_idx];
            let v = &mut self.second_moment[g_idx];
            if m.len() != group.len() {
                return Err(Error::DimMismatch {
                    context: format!("adam moment buffers, group {g_idx}"),
                    left: vec![group.len()],
                    right: vec![m.len()],
                });
            }
            for i in 0..group.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                group[i] = group[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grads(g: f64) -> Gradients<f64> {
        Gradients {
            conv1_weights: vec![g],
            conv1_bias: vec![],
            conv2_weights: vec![],
            conv2_bias: vec![],
            heads: vec![],
        }
    }

    fn lengths() -> Vec<usize> {
        vec![1, 0, 0, 0]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes m_hat = v_hat = g at t = 1, so the update is
        // -lr * g / (|g| + eps) ~= -lr for g = 1.
        let mut state = AdamState::<f64>::new(AdamParams::default(), &lengths());
        let mut theta = [0.5f64];
        let mut groups: Vec<&mut [f64]> = vec![&mut theta, &mut [], &mut [], &mut []];
        state.step(&mut groups, &scalar_grads(1.0)).unwrap();
        let update = theta[0] - 0.5;
        assert!((update + 1e-3).abs() < 1e-8, "update {update}");
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut state = AdamState::<f64>::new(AdamParams::default(), &lengths());
        let mut theta = [1.25f64];
        for _ in 0..10 {
            let mut groups: Vec<&mut [f64]> = vec![&mut theta, &mut [], &mut [], &mut []];
            state.step(&mut groups, &scalar_grads(0.0)).unwrap();
        }
        assert_eq!(theta[0], 1.25);
    }

    #[test]
    fn quadratic_converges_toward_zero() {
        // f(theta) = theta^2, gradient 2 theta, from theta = 1. Adam moves
        // about lr per step early on, so 100 steps at lr 2e-3 clear 0.9.
        let hyper = AdamParams {
            learning_rate: 2e-3,
            ..AdamParams::default()
        };
        let mut state = AdamState::<f64>::new(hyper, &lengths());
        let mut theta = [1.0f64];
        let mut history = Vec::new();
        for _ in 0..100 {
            let g = 2.0 * theta[0];
            let mut groups: Vec<&mut [f64]> = vec![&mut theta, &mut [], &mut [], &mut []];
            state.step(&mut groups, &scalar_grads(g)).unwrap();
            history.push(theta[0].abs());
        }
        assert!(theta[0].abs() < 0.9, "theta {}", theta[0]);
        // Decreasing trend: later quarter strictly below the first quarter.
        let early: f64 = history[..25].iter().sum::<f64>() / 25.0;
        let late: f64 = history[75..].iter().sum::<f64>() / 25.0;
        assert!(late < early);
    }

    #[test]
    fn group_shape_mismatch_rejected() {
        let mut state = AdamState::<f64>::new(AdamParams::default(), &[2, 0, 0, 0]);
        let mut theta = [0.0f64];
        let mut groups: Vec<&mut [f64]> = vec![&mut theta, &mut [], &mut [], &mut []];
        assert!(state.step(&mut groups, &scalar_grads(1.0)).is_err());
    }
}
