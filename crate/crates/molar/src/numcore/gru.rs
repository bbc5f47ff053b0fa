//! Standard GRU cell built from traced primitives.

use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{xavier_init, Parameter};
use crate::numcore::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GruCellParams {
    pub w_xr: Parameter,
    pub w_hr: Parameter,
    pub b_r: Parameter,
    pub w_xz: Parameter,
    pub w_hz: Parameter,
    pub b_z: Parameter,
    pub w_xn: Parameter,
    pub b_xn: Parameter,
    pub w_hn: Parameter,
    pub b_hn: Parameter,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

pub struct GruCellVars {
    w_xr: Var,
    w_hr: Var,
    b_r: Var,
    w_xz: Var,
    w_hz: Var,
    b_z: Var,
    w_xn: Var,
    b_xn: Var,
    w_hn: Var,
    b_hn: Var,
}

impl GruCellParams {
    pub fn new(
        rng: &mut ChaCha20Rng,
        input_dim: usize,
        hidden_dim: usize,
        prefix: &str,
    ) -> Self {
        let p = |name: &str, t: Tensor| Parameter::new(format!("{prefix}.{name}"), t);
        Self {
            w_xr: p("w_xr", xavier_init(rng, input_dim, hidden_dim)),
            w_hr: p("w_hr", xavier_init(rng, hidden_dim, hidden_dim)),
            b_r: p("b_r", Tensor::zeros(&[hidden_dim])),
            w_xz: p("w_xz", xavier_init(rng, input_dim, hidden_dim)),
            w_hz: p("w_hz", xavier_init(rng, hidden_dim, hidden_dim)),
            b_z: p("b_z", Tensor::zeros(&[hidden_dim])),
            w_xn: p("w_xn", xavier_init(rng, input_dim, hidden_dim)),
            b_xn: p("b_xn", Tensor::zeros(&[hidden_dim])),
            w_hn: p("w_hn", xavier_init(rng, hidden_dim, hidden_dim)),
            b_hn: p("b_hn", Tensor::zeros(&[hidden_dim])),
            input_dim,
            hidden_dim,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.w_xr, &self.w_hr, &self.b_r, &self.w_xz, &self.w_hz, &self.b_z, &self.w_xn,
            &self.b_xn, &self.w_hn, &self.b_hn,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_xr,
            &mut self.w_hr,
            &mut self.b_r,
            &mut self.w_xz,
            &mut self.w_hz,
            &mut self.b_z,
            &mut self.w_xn,
            &mut self.b_xn,
            &mut self.w_hn,
            &mut self.b_hn,
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> GruCellVars {
        GruCellVars {
            w_xr: self.w_xr.bind(g, trainable),
            w_hr: self.w_hr.bind(g, trainable),
            b_r: self.b_r.bind(g, trainable),
            w_xz: self.w_xz.bind(g, trainable),
            w_hz: self.w_hz.bind(g, trainable),
            b_z: self.b_z.bind(g, trainable),
            w_xn: self.w_xn.bind(g, trainable),
            b_xn: self.b_xn.bind(g, trainable),
            w_hn: self.w_hn.bind(g, trainable),
            b_hn: self.b_hn.bind(g, trainable),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &GruCellVars, grads: &Gradients) {
        self.w_xr.accumulate_grad(grads, vars.w_xr);
        self.w_hr.accumulate_grad(grads, vars.w_hr);
        self.b_r.accumulate_grad(grads, vars.b_r);
        self.w_xz.accumulate_grad(grads, vars.w_xz);
        self.w_hz.accumulate_grad(grads, vars.w_hz);
        self.b_z.accumulate_grad(grads, vars.b_z);
        self.w_xn.accumulate_grad(grads, vars.w_xn);
        self.b_xn.accumulate_grad(grads, vars.b_xn);
        self.w_hn.accumulate_grad(grads, vars.w_hn);
        self.b_hn.accumulate_grad(grads, vars.b_hn);
    }
}

/// One GRU step: `x_t: [B, d_in]`, `h_prev: [B, d]` -> `[B, d]`.
///
/// r = sigmoid(x W_xr + h W_hr + b_r)
/// z = sigmoid(x W_xz + h W_hz + b_z)
/// n = tanh(x W_xn + b_xn + r (.) (h W_hn + b_hn))
/// h' = (1 - z) (.) n + z (.) h
pub fn gru_cell(g: &mut Graph, x: Var, h_prev: Var, vars: &GruCellVars) -> Result<Var> {
    if g.value(x).rows() != g.value(h_prev).rows() {
        return Err(MolarError::Shape(format!(
            "gru_cell: batch mismatch {} vs {}",
            g.value(x).rows(),
            g.value(h_prev).rows()
        )));
    }
    let gate = |g: &mut Graph, wx: Var, wh: Var, b: Var| -> Result<Var> {
        let xa = g.matmul(x, wx)?;
        let ha = g.matmul(h_prev, wh)?;
        let s = g.add(xa, ha)?;
        g.add_row(s, b)
    };
    let r = {
        let t = gate(g, vars.w_xr, vars.w_hr, vars.b_r)?;
        g.sigmoid(t)
    };
    let z = {
        let t = gate(g, vars.w_xz, vars.w_hz, vars.b_z)?;
        g.sigmoid(t)
    };
    let n = {
        let xa = g.matmul(x, vars.w_xn)?;
        let xa = g.add_row(xa, vars.b_xn)?;
        let ha = g.matmul(h_prev, vars.w_hn)?;
        let ha = g.add_row(ha, vars.b_hn)?;
        let gated = g.mul(r, ha)?;
        let sum = g.add(xa, gated)?;
        g.tanh(sum)
    };
    let one_minus_z = g.affine(z, -1.0, 1.0);
    let a = g.mul(one_minus_z, n)?;
    let b = g.mul(z, h_prev)?;
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_zero_state_gives_zero_vector() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut params = GruCellParams::new(&mut rng, 3, 3, "gru");
        for p in params.parameters_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let h = g.leaf(Tensor::zeros(&[1, 3]));
        let vars = params.bind(&mut g, false);
        let out = gru_cell(&mut g, x, h, &vars).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_inputs_give_identical_transitions() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let params = GruCellParams::new(&mut rng, 4, 4, "gru");
        let step = |h0: &Tensor| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::matrix(1, 4, vec![0.1, 0.2, -0.3, 0.4]).unwrap());
            let h = g.leaf(h0.clone());
            let vars = params.bind(&mut g, false);
            let out = gru_cell(&mut g, x, h, &vars).unwrap();
            g.value(out).clone()
        };
        let h0 = Tensor::matrix(1, 4, vec![0.0, 0.5, -0.5, 1.0]).unwrap();
        assert_eq!(step(&h0), step(&h0));
    }

    #[test]
    fn batch_mismatch_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = GruCellParams::new(&mut rng, 3, 3, "gru");
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let h = g.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let vars = params.bind(&mut g, false);
        assert!(gru_cell(&mut g, x, h, &vars).is_err());
    }
}
