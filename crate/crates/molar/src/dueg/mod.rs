//! Dynamic user embedding generator: a causal transformer over the item
//! embeddings of a user's history with a learned trailing user token. There
//! is no word-embedding table — inputs are already item vectors — and the
//! readout is the hidden state at the user-token position, which attends to
//! every history item.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{MolarError, Result};
use crate::numcore::attention::{attention_block, AttentionBlockParams, AttentionBlockVars};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{normal_init, xavier_init, Parameter};
use crate::numcore::tensor::Tensor;

pub const DUEG_MAGIC: &[u8; 8] = b"MOLDUEG1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuegConfig {
    pub dim: usize,
    pub max_seq_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub input_projection: bool,
}

impl Default for DuegConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            max_seq_len: 10,
            layers: 2,
            heads: 2,
            ffn_mult: 4,
            input_projection: true,
        }
    }
}

#[derive(Clone)]
pub struct DuegModel {
    pub config: DuegConfig,
    pub input_proj: Option<Parameter>,
    /// One position per history slot plus one for the user token.
    pub pos_emb: Parameter,
    pub user_token: Parameter,
    pub blocks: Vec<AttentionBlockParams>,
}

pub struct DuegVars {
    input_proj: Option<Var>,
    pos_emb: Var,
    user_token: Var,
    blocks: Vec<AttentionBlockVars>,
}

impl DuegModel {
    pub fn new(config: DuegConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.dim;
        let input_proj = config
            .input_projection
            .then(|| Parameter::new("dueg.input_proj", xavier_init(&mut rng, d, d)));
        let pos_emb = Parameter::new(
            "dueg.pos_emb",
            normal_init(&mut rng, &[config.max_seq_len + 1, d], 0.02),
        );
        let user_token = Parameter::new(
            "dueg.user_token",
            normal_init(&mut rng, &[1, d], 1.0 / (d as f64).sqrt()),
        );
        let blocks = (0..config.layers)
            .map(|l| {
                AttentionBlockParams::new(
                    &mut rng,
                    d,
                    config.heads,
                    config.ffn_mult,
                    &format!("dueg.block{l}"),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            input_proj,
            pos_emb,
            user_token,
            blocks,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        if let Some(p) = &self.input_proj {
            out.push(p);
        }
        out.push(&self.pos_emb);
        out.push(&self.user_token);
        for b in &self.blocks {
            out.extend(b.parameters());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.input_proj {
            out.push(p);
        }
        out.push(&mut self.pos_emb);
        out.push(&mut self.user_token);
        for b in &mut self.blocks {
            out.extend(b.parameters_mut());
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> DuegVars {
        DuegVars {
            input_proj: self.input_proj.as_ref().map(|p| p.bind(g, trainable)),
            pos_emb: self.pos_emb.bind(g, trainable),
            user_token: self.user_token.bind(g, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(g, trainable)).collect(),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &DuegVars, grads: &Gradients) {
        if let (Some(p), Some(v)) = (&mut self.input_proj, &vars.input_proj) {
            p.accumulate_grad(grads, *v);
        }
        self.pos_emb.accumulate_grad(grads, vars.pos_emb);
        self.user_token.accumulate_grad(grads, vars.user_token);
        for (b, v) in self.blocks.iter_mut().zip(&vars.blocks) {
            b.accumulate_grads(v, grads);
        }
    }

    /// Full hidden-state matrix `[n+1, d]` over `[items..., user_token]`.
    pub fn forward_states_graph(
        &self,
        g: &mut Graph,
        vars: &DuegVars,
        item_embeddings: Var,
    ) -> Result<Var> {
        let n = g.value(item_embeddings).rows();
        if n == 0 {
            return Err(MolarError::Data("dueg: empty input sequence".into()));
        }
        if n > self.config.max_seq_len {
            return Err(MolarError::Shape(format!(
                "dueg: sequence length {n} exceeds max_seq_len {}; caller truncates",
                self.config.max_seq_len
            )));
        }
        if g.value(item_embeddings).cols() != self.config.dim {
            return Err(MolarError::Shape(format!(
                "dueg: input width {} vs model dim {}",
                g.value(item_embeddings).cols(),
                self.config.dim
            )));
        }
        let x = match &vars.input_proj {
            Some(w) => g.matmul(item_embeddings, *w)?,
            None => item_embeddings,
        };
        let seq = g.concat_rows(&[x, vars.user_token])?;
        let pos = g.slice_rows(vars.pos_emb, 0, n + 1)?;
        let mut h = g.add(seq, pos)?;
        for block in &vars.blocks {
            h = attention_block(g, h, block, true)?;
        }
        Ok(h)
    }

    /// Content user embedding: hidden state at the user-token position,
    /// `[1, d]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &DuegVars,
        item_embeddings: Var,
    ) -> Result<Var> {
        let n = g.value(item_embeddings).rows();
        let states = self.forward_states_graph(g, vars, item_embeddings)?;
        g.slice_rows(states, n, 1)
    }

    /// Value-path forward from raw item vectors.
    pub fn forward(&self, item_embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        if item_embeddings.is_empty() {
            return Err(MolarError::Data("dueg: empty input sequence".into()));
        }
        let d = self.config.dim;
        let mut data = Vec::with_capacity(item_embeddings.len() * d);
        for e in item_embeddings {
            if e.len() != d {
                return Err(MolarError::Shape(format!(
                    "dueg: item embedding dim {} vs model dim {d}",
                    e.len()
                )));
            }
            data.extend_from_slice(e);
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.leaf(Tensor::matrix(item_embeddings.len(), d, data)?);
        let out = self.forward_graph(&mut g, &vars, x)?;
        Ok(g.value(out).data().to_vec())
    }

    // ── checkpoint format MOLDUEG1 ──────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(DUEG_MAGIC)?;
        binio::write_u32(&mut w, self.config.dim as u32)?;
        binio::write_u32(&mut w, self.config.max_seq_len as u32)?;
        binio::write_u32(&mut w, self.config.layers as u32)?;
        binio::write_u32(&mut w, self.config.heads as u32)?;
        binio::write_u32(&mut w, self.config.ffn_mult as u32)?;
        binio::write_u32(&mut w, u32::from(self.config.input_projection))?;
        for p in self.parameters() {
            binio::write_tensor_f32(&mut w, &p.value)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        binio::expect_magic(&mut r, DUEG_MAGIC, "MOLDUEG1 checkpoint")?;
        let config = DuegConfig {
            dim: binio::read_u32(&mut r)? as usize,
            max_seq_len: binio::read_u32(&mut r)? as usize,
            layers: binio::read_u32(&mut r)? as usize,
            heads: binio::read_u32(&mut r)? as usize,
            ffn_mult: binio::read_u32(&mut r)? as usize,
            input_projection: binio::read_u32(&mut r)? != 0,
        };
        let mut model = Self::new(config, 0)?;
        for p in model.parameters_mut() {
            let t = binio::read_tensor_f32(&mut r)?;
            if t.shape() != p.value.shape() {
                return Err(MolarError::Format(format!(
                    "checkpoint tensor shape {:?} vs expected {:?} for '{}'",
                    t.shape(),
                    p.value.shape(),
                    p.name
                )));
            }
            p.value = t;
        }
        Ok(model)
    }
}

/// Dot-product score between a user embedding and one item embedding.
pub fn score_item(user_embedding: &[f64], item_embedding: &[f64]) -> Result<f64> {
    if user_embedding.len() != item_embedding.len() {
        return Err(MolarError::Shape(format!(
            "score_item: dims {} vs {}",
            user_embedding.len(),
            item_embedding.len()
        )));
    }
    Ok(user_embedding
        .iter()
        .zip(item_embedding)
        .map(|(a, b)| a * b)
        .sum())
}

/// The k highest-scoring items, ties broken by ascending item id. History
/// items are not filtered out.
pub fn predict_top_k(user_embedding: &[f64], item_matrix: &Tensor, k: usize) -> Result<Vec<u64>> {
    let n = item_matrix.rows();
    if k > n {
        return Err(MolarError::Config(format!(
            "k={k} exceeds catalog size {n}"
        )));
    }
    let mut scored: Vec<(f64, u64)> = (0..n)
        .map(|i| {
            let s: f64 = user_embedding
                .iter()
                .zip(item_matrix.row(i))
                .map(|(a, b)| a * b)
                .sum();
            (s, i as u64)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored[..k].iter().map(|&(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> DuegModel {
        DuegModel::new(
            DuegConfig {
                dim: 8,
                max_seq_len: 5,
                layers: 1,
                heads: 2,
                ffn_mult: 2,
                input_projection: true,
            },
            13,
        )
        .unwrap()
    }

    fn embs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn output_dimension_and_determinism() {
        let model = tiny();
        let items = embs(3, 8, 1);
        let a = model.forward(&items).unwrap();
        let b = model.forward(&items).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn permuting_items_changes_the_embedding() {
        let model = tiny();
        let items = embs(3, 8, 2);
        let mut permuted = items.clone();
        permuted.swap(0, 2);
        assert_ne!(model.forward(&items).unwrap(), model.forward(&permuted).unwrap());
    }

    #[test]
    fn empty_and_overlong_sequences_error() {
        let model = tiny();
        assert!(model.forward(&[]).is_err());
        assert!(model.forward(&embs(6, 8, 3)).is_err());
    }

    #[test]
    fn readout_depends_on_every_position() {
        let model = tiny();
        let items = embs(4, 8, 4);
        let base = model.forward(&items).unwrap();
        for t in 0..items.len() {
            let mut changed = items.clone();
            changed[t][0] += 0.5;
            assert_ne!(
                model.forward(&changed).unwrap(),
                base,
                "perturbing position {t} left the readout unchanged"
            );
        }
    }

    #[test]
    fn single_item_forward_works() {
        let model = tiny();
        let out = model.forward(&embs(1, 8, 5)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn score_oracles() {
        assert_eq!(score_item(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // linearity: score(E, e) + score(E, f) = score(E, e+f)
        let e = vec![0.3, -0.7, 0.2];
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![-0.5, 0.25, 1.5];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = score_item(&e, &a).unwrap() + score_item(&e, &b).unwrap();
        assert!((lhs - score_item(&e, &ab).unwrap()).abs() < 1e-12);
        assert!(score_item(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn top_k_matches_exhaustive_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let n = rng.random_range(2..30);
            let d = 4;
            let items = Tensor::matrix(
                n,
                d,
                (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let user: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(1..=n);
            let got = predict_top_k(&user, &items, k).unwrap();
            // oracle: full sort
            let mut pairs: Vec<(f64, u64)> = (0..n)
                .map(|i| {
                    (
                        user.iter().zip(items.row(i)).map(|(a, b)| a * b).sum(),
                        i as u64,
                    )
                })
                .collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let oracle: Vec<u64> = pairs[..k].iter().map(|&(_, i)| i).collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn top_k_tie_rule_and_full_permutation() {
        let items = Tensor::matrix(4, 2, vec![0.0; 8]).unwrap();
        let user = vec![1.0, 1.0];
        // all-equal scores: ids in ascending order
        assert_eq!(predict_top_k(&user, &items, 3).unwrap(), vec![0, 1, 2]);
        let all = predict_top_k(&user, &items, 4).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(predict_top_k(&user, &items, 5).is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let model = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("dueg1.bin");
        let p2 = dir.path().join("dueg2.bin");
        model.save(&p1).unwrap();
        let loaded = DuegModel::load(&p1).unwrap();
        assert_eq!(loaded.config, model.config);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
