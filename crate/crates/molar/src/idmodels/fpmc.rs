//! Factorized personalized Markov chains.
//!
//! Four factor tables: user factors, item factors, and the last-item /
//! next-item transition factors. The user embedding is
//! `V^U_u + V^LI_{last item}` and an item's scoring factor is
//! `V^IU_i + V^IL_i`, so the score couples both the matrix-factorization
//! and the Markov-transition parts through one dot product.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{normal_init, Parameter};

#[derive(Clone, Debug)]
pub struct FpmcModel {
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub user_factors: Parameter,
    pub item_factors: Parameter,
    pub last_transition: Parameter,
    pub next_transition: Parameter,
}

pub struct FpmcVars {
    user_factors: Var,
    item_factors: Var,
    last_transition: Var,
    next_transition: Var,
}

impl FpmcModel {
    pub fn new(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            num_users,
            num_items,
            user_factors: Parameter::new(
                "fpmc.user_factors",
                normal_init(&mut rng, &[num_users, dim], std),
            ),
            item_factors: Parameter::new(
                "fpmc.item_factors",
                normal_init(&mut rng, &[num_items, dim], std),
            ),
            last_transition: Parameter::new(
                "fpmc.last_transition",
                normal_init(&mut rng, &[num_items, dim], std),
            ),
            next_transition: Parameter::new(
                "fpmc.next_transition",
                normal_init(&mut rng, &[num_items, dim], std),
            ),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.user_factors,
            &self.item_factors,
            &self.last_transition,
            &self.next_transition,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.user_factors,
            &mut self.item_factors,
            &mut self.last_transition,
            &mut self.next_transition,
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FpmcVars {
        FpmcVars {
            user_factors: self.user_factors.bind(g, trainable),
            item_factors: self.item_factors.bind(g, trainable),
            last_transition: self.last_transition.bind(g, trainable),
            next_transition: self.next_transition.bind(g, trainable),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &FpmcVars, grads: &Gradients) {
        self.user_factors.accumulate_grad(grads, vars.user_factors);
        self.item_factors.accumulate_grad(grads, vars.item_factors);
        self.last_transition
            .accumulate_grad(grads, vars.last_transition);
        self.next_transition
            .accumulate_grad(grads, vars.next_transition);
    }

    /// `[1, d]` user embedding: user factor + last-item transition factor.
    pub fn user_embedding_graph(
        &self,
        g: &mut Graph,
        vars: &FpmcVars,
        user_id: u64,
        items: &[u64],
    ) -> Result<Var> {
        let last = *items.last().ok_or_else(|| {
            MolarError::Data("fpmc: empty input sequence".into())
        })?;
        self.check_ids(user_id, items)?;
        let u = g.gather_rows(vars.user_factors, &[user_id as usize])?;
        let t = g.gather_rows(vars.last_transition, &[last as usize])?;
        g.add(u, t)
    }

    /// `[n, d]` scoring factors for the given items: `V^IU + V^IL` rows.
    pub fn item_factor_graph(&self, g: &mut Graph, vars: &FpmcVars, items: &[u64]) -> Result<Var> {
        let idx = self.item_indices(items)?;
        let a = g.gather_rows(vars.item_factors, &idx)?;
        let b = g.gather_rows(vars.next_transition, &idx)?;
        g.add(a, b)
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

    fn check_ids(&self, user_id: u64, items: &[u64]) -> Result<()> {
        if user_id as usize >= self.num_users {
            return Err(MolarError::Data(format!("unknown user id {user_id}")));
        }
        self.item_indices(items).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_transitions_reduce_to_user_factor() {
        let mut model = FpmcModel::new(3, 5, 4, 1);
        model.last_transition.value.data_mut().fill(0.0);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let e = model
            .user_embedding_graph(&mut g, &vars, 2, &[0, 4])
            .unwrap();
        assert_eq!(g.value(e).data(), model.user_factors.value.row(2));
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let model = FpmcModel::new(3, 5, 4, 1);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        assert!(model.user_embedding_graph(&mut g, &vars, 9, &[0]).is_err());
        assert!(model.user_embedding_graph(&mut g, &vars, 0, &[7]).is_err());
        assert!(model.user_embedding_graph(&mut g, &vars, 0, &[]).is_err());
    }
}
