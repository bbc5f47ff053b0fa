//! ID-based sequential recommenders.
//!
//! All three models expose the same two contracts — sequence to user
//! embedding, and (user embedding, item) to score — so the post-alignment
//! partner is swappable.

pub mod fpmc;
pub mod gru4rec;
pub mod pretrain;
pub mod sasrec;

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{MolarError, Result};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::Parameter;
use crate::numcore::tensor::Tensor;

pub use fpmc::FpmcModel;
pub use gru4rec::Gru4RecModel;
pub use pretrain::{pretrain_id_model, IdPretrainConfig, IdPretrainLog};
pub use sasrec::SasrecModel;

pub const IDM_MAGIC: &[u8; 7] = b"MOLIDM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdModelKind {
    Fpmc,
    Gru4Rec,
    Sasrec,
}

impl IdModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "fpmc" => Ok(Self::Fpmc),
            "gru4rec" => Ok(Self::Gru4Rec),
            "sasrec" => Ok(Self::Sasrec),
            other => Err(MolarError::Config(format!(
                "unknown id model '{other}' (expected fpmc|gru4rec|sasrec)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fpmc => "fpmc",
            Self::Gru4Rec => "gru4rec",
            Self::Sasrec => "sasrec",
        }
    }
}

#[derive(Clone)]
pub enum IdModel {
    Fpmc(FpmcModel),
    Gru4Rec(Gru4RecModel),
    Sasrec(SasrecModel),
}

pub enum IdModelVars {
    Fpmc(fpmc::FpmcVars),
    Gru4Rec(gru4rec::Gru4RecVars),
    Sasrec(sasrec::SasrecVars),
}

impl IdModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: IdModelKind,
        num_users: usize,
        num_items: usize,
        dim: usize,
        max_seq_len: usize,
        layers: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            IdModelKind::Fpmc => Self::Fpmc(FpmcModel::new(num_users, num_items, dim, seed)),
            IdModelKind::Gru4Rec => Self::Gru4Rec(Gru4RecModel::new(num_items, dim, seed)),
            IdModelKind::Sasrec => Self::Sasrec(SasrecModel::new(
                num_items,
                dim,
                max_seq_len,
                layers,
                heads,
                seed,
            )?),
        })
    }

    pub fn kind(&self) -> IdModelKind {
        match self {
            Self::Fpmc(_) => IdModelKind::Fpmc,
            Self::Gru4Rec(_) => IdModelKind::Gru4Rec,
            Self::Sasrec(_) => IdModelKind::Sasrec,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Fpmc(m) => m.dim,
            Self::Gru4Rec(m) => m.dim,
            Self::Sasrec(m) => m.dim,
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            Self::Fpmc(m) => m.num_items,
            Self::Gru4Rec(m) => m.num_items,
            Self::Sasrec(m) => m.num_items,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Self::Fpmc(m) => m.parameters(),
            Self::Gru4Rec(m) => m.parameters(),
            Self::Sasrec(m) => m.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Self::Fpmc(m) => m.parameters_mut(),
            Self::Gru4Rec(m) => m.parameters_mut(),
            Self::Sasrec(m) => m.parameters_mut(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> IdModelVars {
        match self {
            Self::Fpmc(m) => IdModelVars::Fpmc(m.bind(g, trainable)),
            Self::Gru4Rec(m) => IdModelVars::Gru4Rec(m.bind(g, trainable)),
            Self::Sasrec(m) => IdModelVars::Sasrec(m.bind(g, trainable)),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &IdModelVars, grads: &Gradients) {
        match (self, vars) {
            (Self::Fpmc(m), IdModelVars::Fpmc(v)) => m.accumulate_grads(v, grads),
            (Self::Gru4Rec(m), IdModelVars::Gru4Rec(v)) => m.accumulate_grads(v, grads),
            (Self::Sasrec(m), IdModelVars::Sasrec(v)) => m.accumulate_grads(v, grads),
            _ => unreachable!("model/vars kind mismatch"),
        }
    }

    /// Trace the user embedding for one (user, sequence) pair: `[1, d]`.
    pub fn user_embedding_graph(
        &self,
        g: &mut Graph,
        vars: &IdModelVars,
        user_id: u64,
        items: &[u64],
    ) -> Result<Var> {
        match (self, vars) {
            (Self::Fpmc(m), IdModelVars::Fpmc(v)) => {
                m.user_embedding_graph(g, v, user_id, items)
            }
            (Self::Gru4Rec(m), IdModelVars::Gru4Rec(v)) => m.user_embedding_graph(g, v, items),
            (Self::Sasrec(m), IdModelVars::Sasrec(v)) => m.user_embedding_graph(g, v, items),
            _ => unreachable!("model/vars kind mismatch"),
        }
    }

    /// Trace the `[n, d]` scoring factors for the given items.
    pub fn item_factor_graph(
        &self,
        g: &mut Graph,
        vars: &IdModelVars,
        items: &[u64],
    ) -> Result<Var> {
        match (self, vars) {
            (Self::Fpmc(m), IdModelVars::Fpmc(v)) => m.item_factor_graph(g, v, items),
            (Self::Gru4Rec(m), IdModelVars::Gru4Rec(v)) => m.item_factor_graph(g, v, items),
            (Self::Sasrec(m), IdModelVars::Sasrec(v)) => m.item_factor_graph(g, v, items),
            _ => unreachable!("model/vars kind mismatch"),
        }
    }

    /// Value-path user embedding (its own throwaway graph).
    pub fn user_embedding(&self, user_id: u64, items: &[u64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let e = self.user_embedding_graph(&mut g, &vars, user_id, items)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Dense `[num_items, d]` matrix of scoring factors.
    pub fn item_factor_matrix(&self) -> Tensor {
        match self {
            Self::Fpmc(m) => {
                let mut data = m.item_factors.value.data().to_vec();
                for (d, s) in data.iter_mut().zip(m.next_transition.value.data()) {
                    *d += s;
                }
                Tensor::new(vec![m.num_items, m.dim], data).expect("factor shape")
            }
            Self::Gru4Rec(m) => m.item_table.value.clone(),
            Self::Sasrec(m) => m.item_table.value.clone(),
        }
    }

    /// Dot-product score of one item against a user embedding.
    pub fn score(&self, user_embedding: &[f64], item_id: u64) -> Result<f64> {
        if (item_id as usize) >= self.num_items() {
            return Err(MolarError::Data(format!("unknown item id {item_id}")));
        }
        if user_embedding.len() != self.dim() {
            return Err(MolarError::Shape(format!(
                "user embedding dim {} vs model dim {}",
                user_embedding.len(),
                self.dim()
            )));
        }
        let factors = self.item_factor_matrix();
        let row = factors.row(item_id as usize);
        Ok(user_embedding.iter().zip(row).map(|(a, b)| a * b).sum())
    }

    // ── checkpoint format MOLIDM1 ───────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(IDM_MAGIC)?;
        let kind_tag: u8 = match self.kind() {
            IdModelKind::Fpmc => 0,
            IdModelKind::Gru4Rec => 1,
            IdModelKind::Sasrec => 2,
        };
        w.write_all(&[kind_tag])?;
        match self {
            Self::Fpmc(m) => {
                binio::write_u32(&mut w, m.num_users as u32)?;
                binio::write_u32(&mut w, m.num_items as u32)?;
                binio::write_u32(&mut w, m.dim as u32)?;
            }
            Self::Gru4Rec(m) => {
                binio::write_u32(&mut w, 0)?;
                binio::write_u32(&mut w, m.num_items as u32)?;
                binio::write_u32(&mut w, m.dim as u32)?;
            }
            Self::Sasrec(m) => {
                binio::write_u32(&mut w, 0)?;
                binio::write_u32(&mut w, m.num_items as u32)?;
                binio::write_u32(&mut w, m.dim as u32)?;
                binio::write_u32(&mut w, m.max_seq_len as u32)?;
                binio::write_u32(&mut w, m.blocks.len() as u32)?;
                binio::write_u32(&mut w, m.blocks[0].heads as u32)?;
            }
        }
        for p in self.parameters() {
            binio::write_tensor_f32(&mut w, &p.value)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        binio::expect_magic(&mut r, IDM_MAGIC, "MOLIDM1 id-model checkpoint")?;
        let mut tag = [0u8; 1];
        std::io::Read::read_exact(&mut r, &mut tag)?;
        let mut model = match tag[0] {
            0 => {
                let num_users = binio::read_u32(&mut r)? as usize;
                let num_items = binio::read_u32(&mut r)? as usize;
                let dim = binio::read_u32(&mut r)? as usize;
                Self::Fpmc(FpmcModel::new(num_users, num_items, dim, 0))
            }
            1 => {
                let _ = binio::read_u32(&mut r)?;
                let num_items = binio::read_u32(&mut r)? as usize;
                let dim = binio::read_u32(&mut r)? as usize;
                Self::Gru4Rec(Gru4RecModel::new(num_items, dim, 0))
            }
            2 => {
                let _ = binio::read_u32(&mut r)?;
                let num_items = binio::read_u32(&mut r)? as usize;
                let dim = binio::read_u32(&mut r)? as usize;
                let max_seq_len = binio::read_u32(&mut r)? as usize;
                let layers = binio::read_u32(&mut r)? as usize;
                let heads = binio::read_u32(&mut r)? as usize;
                Self::Sasrec(SasrecModel::new(
                    num_items,
                    dim,
                    max_seq_len,
                    layers,
                    heads,
                    0,
                )?)
            }
            t => {
                return Err(MolarError::Format(format!(
                    "unknown id-model kind tag {t}"
                )))
            }
        };
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

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: IdModelKind) -> IdModel {
        IdModel::new(kind, 4, 9, 8, 5, 1, 2, 3).unwrap()
    }

    #[test]
    fn all_models_share_the_embedding_and_score_contract() {
        for kind in [IdModelKind::Fpmc, IdModelKind::Gru4Rec, IdModelKind::Sasrec] {
            let m = model(kind);
            let e = m.user_embedding(1, &[0, 3, 7]).unwrap();
            assert_eq!(e.len(), 8, "{:?}", kind);
            let s = m.score(&e, 2).unwrap();
            assert!(s.is_finite());
        }
    }

    #[test]
    fn zero_user_embedding_scores_zero_everywhere() {
        let m = model(IdModelKind::Sasrec);
        let zero = vec![0.0; 8];
        for item in 0..9 {
            assert_eq!(m.score(&zero, item).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_is_linear_in_the_user_embedding() {
        let m = model(IdModelKind::Fpmc);
        let e = m.user_embedding(0, &[1, 2]).unwrap();
        let doubled: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let s1 = m.score(&e, 4).unwrap();
        let s2 = m.score(&doubled, 4).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-12);
    }

    #[test]
    fn argmax_matches_brute_force_scan() {
        for kind in [IdModelKind::Fpmc, IdModelKind::Gru4Rec, IdModelKind::Sasrec] {
            let m = model(kind);
            let e = m.user_embedding(2, &[5, 1]).unwrap();
            let factors = m.item_factor_matrix();
            let mut best = (0u64, f64::NEG_INFINITY);
            for item in 0..m.num_items() as u64 {
                let s: f64 = e
                    .iter()
                    .zip(factors.row(item as usize))
                    .map(|(a, b)| a * b)
                    .sum();
                if s > best.1 {
                    best = (item, s);
                }
            }
            let via_score: Vec<f64> = (0..m.num_items() as u64)
                .map(|i| m.score(&e, i).unwrap())
                .collect();
            let argmax = via_score
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as u64;
            assert_eq!(argmax, best.0);
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [IdModelKind::Fpmc, IdModelKind::Gru4Rec, IdModelKind::Sasrec] {
            let m = model(kind);
            let path = dir.path().join(format!("{}.molidm", kind.name()));
            m.save(&path).unwrap();
            let loaded = IdModel::load(&path).unwrap();
            assert_eq!(loaded.kind(), kind);
            // f32 export: save(load(x)) must be byte-identical to save(x)
            let path2 = dir.path().join(format!("{}-2.molidm", kind.name()));
            loaded.save(&path2).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
    }
}
