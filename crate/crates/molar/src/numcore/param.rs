//! Named trainable parameters and deterministic initializers.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::tensor::Tensor;

/// A trainable tensor with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// Insert this parameter into a graph: tracked when `trainable`,
    /// a plain constant otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Var {
        if trainable {
            g.param(self.value.clone())
        } else {
            g.leaf(self.value.clone())
        }
    }

    /// Accumulate the gradient computed for the bound var into this
    /// parameter's buffer.
    pub fn accumulate_grad(&mut self, grads: &Gradients, var: Var) {
        if let Some(g) = grads.get(var) {
            for (dst, src) in self.grad.data_mut().iter_mut().zip(g.data()) {
                *dst += src;
            }
        }
    }

    pub fn assert_finite_grad(&self) -> Result<()> {
        if !self.grad.is_finite() {
            return Err(MolarError::Training(format!(
                "non-finite gradient in parameter '{}'",
                self.name
            )));
        }
        Ok(())
    }
}

/// Overwrite parameter values in order (shapes must match). Used by
/// checkpoint restore and the finite-difference harness.
pub fn assign_values(params: &mut [&mut Parameter], values: &[Tensor]) -> Result<()> {
    if params.len() != values.len() {
        return Err(MolarError::Shape(format!(
            "assign_values: {} parameters vs {} tensors",
            params.len(),
            values.len()
        )));
    }
    for (p, v) in params.iter_mut().zip(values) {
        if p.value.shape() != v.shape() {
            return Err(MolarError::Shape(format!(
                "assign_values: shape {:?} vs expected {:?} for '{}'",
                v.shape(),
                p.value.shape(),
                p.name
            )));
        }
        p.value = v.clone();
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// Normal(0, std) init.
pub fn normal_init(rng: &mut ChaCha20Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Xavier/Glorot uniform init for a `[fan_in, fan_out]` weight matrix.
pub fn xavier_init(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape/data agree")
}
