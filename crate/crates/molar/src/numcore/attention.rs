//! Pre-norm multi-head self-attention block with a position-wise FFN.

use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{xavier_init, Parameter};
use crate::numcore::tensor::Tensor;

/// Learned weights of one transformer block.
///
/// Layout: `out = h + FFN(LN2(h))` where `h = x + W_o · MHSA(LN1(x))`.
#[derive(Clone, Debug)]
pub struct AttentionBlockParams {
    pub wq: Parameter,
    pub bq: Parameter,
    pub wk: Parameter,
    pub bk: Parameter,
    pub wv: Parameter,
    pub bv: Parameter,
    pub wo: Parameter,
    pub bo: Parameter,
    pub ln1_gamma: Parameter,
    pub ln1_beta: Parameter,
    pub ln2_gamma: Parameter,
    pub ln2_beta: Parameter,
    pub ffn_w1: Parameter,
    pub ffn_b1: Parameter,
    pub ffn_w2: Parameter,
    pub ffn_b2: Parameter,
    pub heads: usize,
    pub dim: usize,
}

/// Graph handles for one bound block.
pub struct AttentionBlockVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln1_gamma: Var,
    ln1_beta: Var,
    ln2_gamma: Var,
    ln2_beta: Var,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
    heads: usize,
    dim: usize,
}

impl AttentionBlockParams {
    pub fn new(
        rng: &mut ChaCha20Rng,
        dim: usize,
        heads: usize,
        ffn_mult: usize,
        prefix: &str,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(MolarError::Config(format!(
                "model dim {dim} not divisible by head count {heads}"
            )));
        }
        let hidden = dim * ffn_mult;
        let p = |name: &str, t: Tensor| Parameter::new(format!("{prefix}.{name}"), t);
        Ok(Self {
            wq: p("wq", xavier_init(rng, dim, dim)),
            bq: p("bq", Tensor::zeros(&[dim])),
            wk: p("wk", xavier_init(rng, dim, dim)),
            bk: p("bk", Tensor::zeros(&[dim])),
            wv: p("wv", xavier_init(rng, dim, dim)),
            bv: p("bv", Tensor::zeros(&[dim])),
            wo: p("wo", xavier_init(rng, dim, dim)),
            bo: p("bo", Tensor::zeros(&[dim])),
            ln1_gamma: p("ln1_gamma", Tensor::full(&[dim], 1.0)),
            ln1_beta: p("ln1_beta", Tensor::zeros(&[dim])),
            ln2_gamma: p("ln2_gamma", Tensor::full(&[dim], 1.0)),
            ln2_beta: p("ln2_beta", Tensor::zeros(&[dim])),
            ffn_w1: p("ffn_w1", xavier_init(rng, dim, hidden)),
            ffn_b1: p("ffn_b1", Tensor::zeros(&[hidden])),
            ffn_w2: p("ffn_w2", xavier_init(rng, hidden, dim)),
            ffn_b2: p("ffn_b2", Tensor::zeros(&[dim])),
            heads,
            dim,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AttentionBlockVars {
        AttentionBlockVars {
            wq: self.wq.bind(g, trainable),
            bq: self.bq.bind(g, trainable),
            wk: self.wk.bind(g, trainable),
            bk: self.bk.bind(g, trainable),
            wv: self.wv.bind(g, trainable),
            bv: self.bv.bind(g, trainable),
            wo: self.wo.bind(g, trainable),
            bo: self.bo.bind(g, trainable),
            ln1_gamma: self.ln1_gamma.bind(g, trainable),
            ln1_beta: self.ln1_beta.bind(g, trainable),
            ln2_gamma: self.ln2_gamma.bind(g, trainable),
            ln2_beta: self.ln2_beta.bind(g, trainable),
            ffn_w1: self.ffn_w1.bind(g, trainable),
            ffn_b1: self.ffn_b1.bind(g, trainable),
            ffn_w2: self.ffn_w2.bind(g, trainable),
            ffn_b2: self.ffn_b2.bind(g, trainable),
            heads: self.heads,
            dim: self.dim,
        }
    }

    pub fn accumulate_grads(&mut self, vars: &AttentionBlockVars, grads: &Gradients) {
        self.wq.accumulate_grad(grads, vars.wq);
        self.bq.accumulate_grad(grads, vars.bq);
        self.wk.accumulate_grad(grads, vars.wk);
        self.bk.accumulate_grad(grads, vars.bk);
        self.wv.accumulate_grad(grads, vars.wv);
        self.bv.accumulate_grad(grads, vars.bv);
        self.wo.accumulate_grad(grads, vars.wo);
        self.bo.accumulate_grad(grads, vars.bo);
        self.ln1_gamma.accumulate_grad(grads, vars.ln1_gamma);
        self.ln1_beta.accumulate_grad(grads, vars.ln1_beta);
        self.ln2_gamma.accumulate_grad(grads, vars.ln2_gamma);
        self.ln2_beta.accumulate_grad(grads, vars.ln2_beta);
        self.ffn_w1.accumulate_grad(grads, vars.ffn_w1);
        self.ffn_b1.accumulate_grad(grads, vars.ffn_b1);
        self.ffn_w2.accumulate_grad(grads, vars.ffn_w2);
        self.ffn_b2.accumulate_grad(grads, vars.ffn_b2);
    }
}

/// Additive causal mask: 0 on and below the diagonal, a large negative
/// number above it.
pub fn causal_mask(len: usize) -> Tensor {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = -1e30;
        }
    }
    Tensor::matrix(len, len, data).expect("square mask")
}

/// One pre-norm transformer block over `x: [L, d]`.
///
/// With `causal` set, the output at position `t` depends only on positions
/// `<= t`.
pub fn attention_block(
    g: &mut Graph,
    x: Var,
    vars: &AttentionBlockVars,
    causal: bool,
) -> Result<Var> {
    let d = vars.dim;
    let len = g.value(x).rows();
    if g.value(x).cols() != d {
        return Err(MolarError::Shape(format!(
            "attention input width {} vs model dim {d}",
            g.value(x).cols()
        )));
    }

    let ln1 = g.layer_norm_rows(x, vars.ln1_gamma, vars.ln1_beta, 1e-8)?;
    let q = {
        let t = g.matmul(ln1, vars.wq)?;
        g.add_row(t, vars.bq)?
    };
    let k = {
        let t = g.matmul(ln1, vars.wk)?;
        g.add_row(t, vars.bk)?
    };
    let v = {
        let t = g.matmul(ln1, vars.wv)?;
        g.add_row(t, vars.bv)?
    };

    let head_dim = d / vars.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mask = causal.then(|| causal_mask(len));
    let mut head_outs = Vec::with_capacity(vars.heads);
    for h in 0..vars.heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let kht = g.transpose(kh)?;
        let scores = g.matmul(qh, kht)?;
        let scores = g.scale(scores, scale);
        let scores = match &mask {
            Some(m) => g.add_const(scores, m)?,
            None => scores,
        };
        let attn = g.softmax_rows(scores)?;
        head_outs.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat_cols(&head_outs)?;
    let proj = {
        let t = g.matmul(merged, vars.wo)?;
        g.add_row(t, vars.bo)?
    };
    let h1 = g.add(x, proj)?;

    let ln2 = g.layer_norm_rows(h1, vars.ln2_gamma, vars.ln2_beta, 1e-8)?;
    let f1 = {
        let t = g.matmul(ln2, vars.ffn_w1)?;
        let t = g.add_row(t, vars.ffn_b1)?;
        g.relu(t)
    };
    let f2 = {
        let t = g.matmul(f1, vars.ffn_w2)?;
        g.add_row(t, vars.ffn_b2)?
    };
    g.add(h1, f2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn block(d: usize, heads: usize, seed: u64) -> AttentionBlockParams {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        AttentionBlockParams::new(&mut rng, d, heads, 2, "blk").unwrap()
    }

    fn forward(params: &AttentionBlockParams, x: &Tensor, causal: bool) -> Tensor {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let vars = params.bind(&mut g, false);
        let out = attention_block(&mut g, xv, &vars, causal).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(AttentionBlockParams::new(&mut rng, 6, 4, 2, "b").is_err());
    }

    #[test]
    fn single_position_works() {
        let params = block(4, 2, 1);
        let x = Tensor::matrix(1, 4, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let out = forward(&params, &x, true);
        assert_eq!(out.shape(), &[1, 4]);
        assert!(out.is_finite());
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let params = block(4, 2, 2);
        let mut base = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64).collect()).unwrap();
        let out_a = forward(&params, &base, true);
        // perturb the last position; earlier outputs must be bit-identical
        base.data_mut()[8] += 10.0;
        let out_b = forward(&params, &base, true);
        assert_eq!(out_a.data()[..8], out_b.data()[..8]);
        assert_ne!(out_a.data()[8..], out_b.data()[8..]);
    }

    #[test]
    fn non_causal_attends_everywhere() {
        let params = block(4, 2, 3);
        let mut base = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64).collect()).unwrap();
        let out_a = forward(&params, &base, false);
        base.data_mut()[8] += 1.0;
        let out_b = forward(&params, &base, false);
        assert_ne!(out_a.data()[..4], out_b.data()[..4]);
    }
}
