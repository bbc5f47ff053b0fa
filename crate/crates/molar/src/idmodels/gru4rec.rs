//! GRU-based sequential recommender. The output projection is tied to the
//! item embedding table, so scoring an item is a dot product between the
//! final hidden state and that item's embedding row.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::gru::{gru_cell, GruCellParams, GruCellVars};
use crate::numcore::param::{normal_init, Parameter};
use crate::numcore::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Gru4RecModel {
    pub dim: usize,
    pub num_items: usize,
    pub item_table: Parameter,
    pub cell: GruCellParams,
}

pub struct Gru4RecVars {
    item_table: Var,
    cell: GruCellVars,
}

impl Gru4RecModel {
    pub fn new(num_items: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            num_items,
            item_table: Parameter::new(
                "gru4rec.item_table",
                normal_init(&mut rng, &[num_items, dim], std),
            ),
            cell: GruCellParams::new(&mut rng, dim, dim, "gru4rec.cell"),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.item_table];
        out.extend(self.cell.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.item_table];
        out.extend(self.cell.parameters_mut());
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Gru4RecVars {
        Gru4RecVars {
            item_table: self.item_table.bind(g, trainable),
            cell: self.cell.bind(g, trainable),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &Gru4RecVars, grads: &Gradients) {
        self.item_table.accumulate_grad(grads, vars.item_table);
        self.cell.accumulate_grads(&vars.cell, grads);
    }

    /// Final hidden state after consuming the sequence: `[1, d]`.
    pub fn user_embedding_graph(
        &self,
        g: &mut Graph,
        vars: &Gru4RecVars,
        items: &[u64],
    ) -> Result<Var> {
        if items.is_empty() {
            return Err(MolarError::Data("gru4rec: empty input sequence".into()));
        }
        let idx = self.item_indices(items)?;
        let mut h = g.leaf(Tensor::zeros(&[1, self.dim]));
        for &i in &idx {
            let x = g.gather_rows(vars.item_table, &[i])?;
            h = gru_cell(g, x, h, &vars.cell)?;
        }
        Ok(h)
    }

    pub fn item_factor_graph(&self, g: &mut Graph, vars: &Gru4RecVars, items: &[u64]) -> Result<Var> {
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
