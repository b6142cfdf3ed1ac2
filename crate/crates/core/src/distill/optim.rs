//! Adam optimizer with per-parameter state and optional global-norm clipping.

use super::DistillError;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            // Default student learning rate for distillation runs.
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct ParamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Bias-corrected adaptive-moment optimizer over a set of parameter tensors.
pub struct Adam {
    config: AdamConfig,
    params: Vec<Tensor>,
    states: Vec<ParamState>,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, config: AdamConfig) -> Adam {
        let mut adam = Adam { config, params: Vec::new(), states: Vec::new() };
        adam.add_params(&params);
        adam
    }

    /// Register additional parameters (deduplicated by tensor identity);
    /// used when a distiller brings its own projection parameters.
    pub fn add_params(&mut self, params: &[Tensor]) {
        for p in params {
            if self.params.iter().any(|q| q.ptr_eq(p)) {
                continue;
            }
            self.states.push(ParamState { m: vec![0.0; p.numel()], v: vec![0.0; p.numel()], step: 0 });
            self.params.push(p.clone());
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.clear_grad();
        }
    }

    fn apply(&mut self, index: usize, grad: &[f64]) {
        let c = &self.config;
        let state = &mut self.states[index];
        state.step += 1;
        let bc1 = 1.0 - c.beta1.powi(state.step as i32);
        let bc2 = 1.0 - c.beta2.powi(state.step as i32);
        let param = &self.params[index];
        param.update_data(|data| {
            for i in 0..data.len() {
                let g = grad[i] + c.weight_decay * data[i];
                state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
                state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                data[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
            }
        });
        param.clear_grad();
    }

    /// One update over all registered parameters. Every parameter must hold
    /// a gradient; a missing one is a contract error. Gradients are consumed.
    pub fn step(&mut self) -> Result<(), DistillError> {
        for i in 0..self.params.len() {
            if !self.params[i].has_grad() {
                return Err(DistillError::Contract(format!(
                    "parameter {i} has no gradient; run backward before the optimizer step"
                )));
            }
        }
        for i in 0..self.params.len() {
            let grad = self.params[i].grad().expect("checked above");
            self.apply(i, &grad);
        }
        Ok(())
    }

    /// One update over the parameters that hold gradients, skipping the rest.
    /// Multi-task training uses this: a batch from one task leaves the other
    /// tasks' head parameters without gradients. Returns the update count.
    pub fn step_partial(&mut self) -> usize {
        let mut updated = 0;
        for i in 0..self.params.len() {
            if let Some(grad) = self.params[i].grad() {
                self.apply(i, &grad);
                updated += 1;
            }
        }
        updated
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let mut total = 0.0;
    for p in params {
        if let Some(g) = p.grad() {
            total += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params {
            p.with_grad_mut(|g| {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            });
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let x = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let mut adam = Adam::new(
            vec![x.clone()],
            AdamConfig { learning_rate: 0.1, ..AdamConfig::default() },
        );
        // f(x) = x^2, f'(1) = 2.
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        adam.step().unwrap();
        let moved = 1.0 - x.item();
        // Bias-corrected first step is lr * g / (|g| + eps') ~ lr.
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
        assert!(!x.has_grad(), "step consumes gradients");
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let x = Tensor::from_vec(vec![3.0, -2.0], &[2]).unwrap().requiring_grad();
        let mut adam = Adam::new(vec![x.clone()], AdamConfig::default());
        x.accumulate_grad(&[0.0, 0.0]);
        adam.step().unwrap();
        assert_eq!(x.to_vec(), vec![3.0, -2.0]);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let x = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let mut adam = Adam::new(vec![x], AdamConfig::default());
        assert!(matches!(adam.step(), Err(DistillError::Contract(_))));
    }

    #[test]
    fn parameter_groups_update_independently() {
        let lr = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
        let a = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let b = Tensor::from_vec(vec![2.0], &[1]).unwrap().requiring_grad();
        let mut joint = Adam::new(vec![a.clone(), b.clone()], lr.clone());
        a.accumulate_grad(&[0.3]);
        b.accumulate_grad(&[-0.7]);
        joint.step().unwrap();

        let a2 = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let b2 = Tensor::from_vec(vec![2.0], &[1]).unwrap().requiring_grad();
        let mut only_a = Adam::new(vec![a2.clone()], lr.clone());
        let mut only_b = Adam::new(vec![b2.clone()], lr);
        a2.accumulate_grad(&[0.3]);
        b2.accumulate_grad(&[-0.7]);
        only_a.step().unwrap();
        only_b.step().unwrap();

        assert_eq!(a.to_vec(), a2.to_vec());
        assert_eq!(b.to_vec(), b2.to_vec());
    }

    #[test]
    fn step_partial_skips_gradient_free_params() {
        let a = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let b = Tensor::from_vec(vec![2.0], &[1]).unwrap().requiring_grad();
        let mut adam = Adam::new(vec![a.clone(), b.clone()], AdamConfig::default());
        a.accumulate_grad(&[1.0]);
        assert_eq!(adam.step_partial(), 1);
        assert_ne!(a.to_vec(), vec![1.0]);
        assert_eq!(b.to_vec(), vec![2.0]);
    }

    #[test]
    fn add_params_deduplicates_by_identity() {
        let a = Tensor::from_vec(vec![1.0], &[1]).unwrap().requiring_grad();
        let mut adam = Adam::new(vec![a.clone()], AdamConfig::default());
        adam.add_params(std::slice::from_ref(&a));
        assert_eq!(adam.params().len(), 1);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let a = Tensor::from_vec(vec![3.0], &[1]).unwrap().requiring_grad();
        let b = Tensor::from_vec(vec![4.0], &[1]).unwrap().requiring_grad();
        a.accumulate_grad(&[3.0]);
        b.accumulate_grad(&[4.0]);
        let params = vec![a.clone(), b.clone()];
        let norm = clip_global_norm(&params, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = params
            .iter()
            .map(|p| p.grad().unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }
}
