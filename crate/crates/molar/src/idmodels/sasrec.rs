//! Self-attentive sequential recommender: item embeddings + learned
//! positions through causal transformer blocks; the user embedding is the
//! hidden state at the last position.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};
use crate::numcore::attention::{attention_block, AttentionBlockParams, AttentionBlockVars};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{normal_init, Parameter};

#[derive(Clone, Debug)]
pub struct SasrecModel {
    pub dim: usize,
    pub num_items: usize,
    pub max_seq_len: usize,
    pub item_table: Parameter,
    pub pos_emb: Parameter,
    pub blocks: Vec<AttentionBlockParams>,
}

pub struct SasrecVars {
    item_table: Var,
    pos_emb: Var,
    blocks: Vec<AttentionBlockVars>,
}

impl SasrecModel {
    pub fn new(
        num_items: usize,
        dim: usize,
        max_seq_len: usize,
        layers: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let item_table = Parameter::new(
            "sasrec.item_table",
            normal_init(&mut rng, &[num_items, dim], std),
        );
        let pos_emb = Parameter::new(
            "sasrec.pos_emb",
            normal_init(&mut rng, &[max_seq_len, dim], 0.02),
        );
        let blocks = (0..layers)
            .map(|l| {
                AttentionBlockParams::new(&mut rng, dim, heads, 4, &format!("sasrec.block{l}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            num_items,
            max_seq_len,
            item_table,
            pos_emb,
            blocks,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.item_table, &self.pos_emb];
        for b in &self.blocks {
            out.extend(b.parameters());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.item_table, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.parameters_mut());
        }
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> SasrecVars {
        SasrecVars {
            item_table: self.item_table.bind(g, trainable),
            pos_emb: self.pos_emb.bind(g, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(g, trainable)).collect(),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &SasrecVars, grads: &Gradients) {
        self.item_table.accumulate_grad(grads, vars.item_table);
        self.pos_emb.accumulate_grad(grads, vars.pos_emb);
        for (b, v) in self.blocks.iter_mut().zip(&vars.blocks) {
            b.accumulate_grads(v, grads);
        }
    }

    /// Hidden state at the last position: `[1, d]`.
    pub fn user_embedding_graph(
        &self,
        g: &mut Graph,
        vars: &SasrecVars,
        items: &[u64],
    ) -> Result<Var> {
        if items.is_empty() {
            return Err(MolarError::Data("sasrec: empty input sequence".into()));
        }
        if items.len() > self.max_seq_len {
            return Err(MolarError::Shape(format!(
                "sasrec: sequence length {} exceeds max_seq_len {}",
                items.len(),
                self.max_seq_len
            )));
        }
        let idx = self.item_indices(items)?;
        let x = g.gather_rows(vars.item_table, &idx)?;
        let pos = g.slice_rows(vars.pos_emb, 0, idx.len())?;
        let mut h = g.add(x, pos)?;
        for block in &vars.blocks {
            h = attention_block(g, h, block, true)?;
        }
        g.slice_rows(h, idx.len() - 1, 1)
    }

    pub fn item_factor_graph(&self, g: &mut Graph, vars: &SasrecVars, items: &[u64]) -> Result<Var> {
        let idx = self.item_indices(items)?;
        g.gather_rows(vars.item_table, &idx)
    }

    fn item_indices(&self, items: &[u64]) -> Result<Vec<usize>> {
        items
            .iter()
            .map(|&i| {
                if (i as usize) < self.num_items {
                    Ok(i as usize)
                } else {
                    Err(MolarError::Data(format!("unknown item id {i}")))
                }
            })
            .collect()
    }
}
