//! Adam optimizer with bias correction.

use crate::error::Result;
use crate::numcore::param::Parameter;
use crate::numcore::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Moment buffers sized to match `params`, in order.
    pub fn new(params: &[&Parameter]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore(m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Self {
        Self {
            m,
            v,
            step,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update over `params` from their `grad` buffers.
    ///
    /// Parameters with an all-zero gradient keep their first/second moments
    /// decaying, which matches the standard formulation; a parameter whose
    /// moments are also zero stays bit-identical.
    pub fn update(&mut self, params: &mut [&mut Parameter], lr: f64) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            p.assert_finite_grad()?;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(name: &str, value: f64) -> Parameter {
        Parameter::new(name, Tensor::scalar(value))
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = scalar_param("w", 1.25);
        let mut state = AdamState::new(&[&p]);
        state.update(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value.item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr_with_bias_correction() {
        // grad = 1 constantly: mhat = vhat = 1 on step one, so the update is
        // lr / (1 + eps) = lr to within eps.
        let mut p = scalar_param("w", 0.0);
        p.grad = Tensor::scalar(1.0);
        let mut state = AdamState::new(&[&p]);
        state.update(&mut [&mut p], 0.01).unwrap();
        assert!((p.value.item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn excluded_parameter_stays_bit_identical() {
        let mut trained = scalar_param("w", 0.5);
        trained.grad = Tensor::scalar(0.3);
        let frozen = scalar_param("frozen", 0.75);
        let before = frozen.value.clone();
        let mut state = AdamState::new(&[&trained]);
        state.update(&mut [&mut trained], 0.1).unwrap();
        assert_eq!(frozen.value, before);
        assert_ne!(trained.value.item(), 0.5);
    }

    #[test]
    fn non_finite_gradient_is_a_training_error() {
        let mut p = scalar_param("bad", 0.0);
        p.grad = Tensor::scalar(f64::NAN);
        let mut state = AdamState::new(&[&p]);
        let err = state.update(&mut [&mut p], 0.1).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut p = scalar_param("w", 0.2);
            let mut state = AdamState::new(&[&p]);
            for i in 0..10 {
                p.grad = Tensor::scalar(0.1 * (i as f64 + 1.0));
                state.update(&mut [&mut p], 0.05).unwrap();
            }
            p.value.item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
