use super::params::PredictorParams;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

/// Adam moments plus decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    /// Zeroed moments with one accumulator per tensor of length `sizes[i]`.
    pub fn with_sizes(sizes: &[usize], base_lr: f64, weight_decay: f64) -> Self {
        Self {
            first_moment: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second_moment: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
            base_lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(params: &PredictorParams, base_lr: f64, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self::with_sizes(&sizes, base_lr, weight_decay)
    }

    /// One bias-corrected Adam update over parallel lists of parameter and
    /// gradient slices, followed by `θ -= lr·wd·θ`.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape("optimizer tensors", self.first_moment.len(), params.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::shape(format!("optimizer tensor {i}"), self.first_moment[i].len(), g.len()));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = 1.0 - b1.powf(self.step as f64);
        let correction2 = 1.0 - b2.powf(self.step as f64);
        let decay = lr * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon) + decay * p[j];
            }
        }
        Ok(())
    }
}

/// Adam step on every predictor tensor, in declaration order.
pub fn adam_step(
    params: &mut PredictorParams,
    grads: &PredictorParams,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let grad_views = grads.tensors();
    let grad_slices: Vec<&[f64]> = grad_views.iter().map(|t| t.data).collect();
    let mut param_views = params.tensors_mut();
    let mut param_slices: Vec<&mut [f64]> = param_views.iter_mut().map(|t| &mut *t.data).collect();
    opt.update(&mut param_slices, &grad_slices, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut opt = OptimizerState::with_sizes(&[3], 1e-3, 0.0);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        for _ in 0..10 {
            opt.update(&mut [&mut p[..]], &[&g[..]], 1e-3).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.step, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = OptimizerState::with_sizes(&[4], 1e-3, 0.0);
        let mut p = vec![0.0; 4];
        let g = vec![3.0, -0.02, 0.0, 150.0];
        opt.update(&mut [&mut p[..]], &[&g[..]], 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-8);
        assert_eq!(p[2], 0.0);
        assert!((p[3] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut opt = OptimizerState::with_sizes(&[1], 0.1, 0.5);
        let mut p = vec![2.0];
        opt.update(&mut [&mut p[..]], &[&[0.0][..]], 0.1).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_two_parameter_quadratic() {
        // f(x, y) = (x - 3)² + 10 (y + 1)², minimizer (3, -1)
        let mut opt = OptimizerState::with_sizes(&[2], 0.02, 0.0);
        let mut p = vec![2.5, -0.5];
        for _ in 0..100 {
            let g = vec![2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            opt.update(&mut [&mut p[..]], &[&g[..]], 0.02).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "x = {}", p[0]);
        assert!((p[1] + 1.0).abs() < 1e-3, "y = {}", p[1]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = OptimizerState::with_sizes(&[2], 1e-3, 0.0);
        let mut p = vec![0.0; 3];
        assert!(opt.update(&mut [&mut p[..]], &[&[0.0; 3][..]], 1e-3).is_err());
        assert!(opt.update(&mut [], &[], 1e-3).is_err());
    }
}
