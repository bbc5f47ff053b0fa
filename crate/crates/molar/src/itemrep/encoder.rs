//! The item encoder: a small non-causal transformer over the item's hashed
//! text tokens plus one projected image-feature position, read out at a
//! learned trailing `cur_item` token. The hidden state at that position is
//! the item embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MolarError, Result};
use crate::itemrep::record::ItemRecord;
use crate::itemrep::tokenizer::tokenize;
use crate::numcore::attention::{attention_block, AttentionBlockParams, AttentionBlockVars};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::param::{normal_init, Parameter};
use crate::numcore::tensor::Tensor;
use crate::numcore::{fnv1a, fnv1a_f64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub text: bool,
    pub image: bool,
}

impl ModalityMask {
    pub fn both() -> Self {
        Self {
            text: true,
            image: true,
        }
    }

    pub fn text_only() -> Self {
        Self {
            text: true,
            image: false,
        }
    }

    pub fn image_only() -> Self {
        Self {
            text: false,
            image: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemEncoderConfig {
    pub dim: usize,
    pub vocab_size: usize,
    pub image_dim: usize,
    /// Text tokens beyond this count are truncated.
    pub max_text_tokens: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub modality_mask: ModalityMask,
}

impl Default for ItemEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            vocab_size: 8192,
            image_dim: 32,
            max_text_tokens: 24,
            layers: 2,
            heads: 2,
            ffn_mult: 4,
            modality_mask: ModalityMask::both(),
        }
    }
}

/// One encoded item.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemEmbedding {
    pub item_id: u64,
    pub vector: Vec<f64>,
    pub encoder_version: u64,
}

#[derive(Clone)]
pub struct ItemEncoder {
    pub config: ItemEncoderConfig,
    pub token_table: Parameter,
    pub image_proj: Parameter,
    pub pos_emb: Parameter,
    pub cur_item_token: Parameter,
    pub blocks: Vec<AttentionBlockParams>,
}

pub struct ItemEncoderVars {
    token_table: Var,
    image_proj: Var,
    pos_emb: Var,
    cur_item_token: Var,
    blocks: Vec<AttentionBlockVars>,
}

impl ItemEncoder {
    pub fn new(config: ItemEncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.dim;
        let emb_std = 1.0 / (d as f64).sqrt();
        let token_table = Parameter::new(
            "encoder.token_table",
            normal_init(&mut rng, &[config.vocab_size, d], emb_std),
        );
        let image_proj = Parameter::new(
            "encoder.image_proj",
            normal_init(&mut rng, &[config.image_dim, d], emb_std),
        );
        let pos_emb = Parameter::new(
            "encoder.pos_emb",
            normal_init(&mut rng, &[config.max_text_tokens + 2, d], 0.02),
        );
        let cur_item_token = Parameter::new(
            "encoder.cur_item_token",
            normal_init(&mut rng, &[1, d], emb_std),
        );
        let blocks = (0..config.layers)
            .map(|l| {
                AttentionBlockParams::new(
                    &mut rng,
                    d,
                    config.heads,
                    config.ffn_mult,
                    &format!("encoder.block{l}"),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            token_table,
            image_proj,
            pos_emb,
            cur_item_token,
            blocks,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![
            &self.token_table,
            &self.image_proj,
            &self.pos_emb,
            &self.cur_item_token,
        ];
        for b in &self.blocks {
            out.extend(b.parameters());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![
            &mut self.token_table,
            &mut self.image_proj,
            &mut self.pos_emb,
            &mut self.cur_item_token,
        ];
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

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ItemEncoderVars {
        ItemEncoderVars {
            token_table: self.token_table.bind(g, trainable),
            image_proj: self.image_proj.bind(g, trainable),
            pos_emb: self.pos_emb.bind(g, trainable),
            cur_item_token: self.cur_item_token.bind(g, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(g, trainable)).collect(),
        }
    }

    pub fn accumulate_grads(&mut self, vars: &ItemEncoderVars, grads: &Gradients) {
        self.token_table.accumulate_grad(grads, vars.token_table);
        self.image_proj.accumulate_grad(grads, vars.image_proj);
        self.pos_emb.accumulate_grad(grads, vars.pos_emb);
        self.cur_item_token
            .accumulate_grad(grads, vars.cur_item_token);
        for (b, v) in self.blocks.iter_mut().zip(&vars.blocks) {
            b.accumulate_grads(v, grads);
        }
    }

    /// Content hash over hyperparameters and every parameter value; changes
    /// whenever a forward pass could produce different numbers. Keys the
    /// embedding cache.
    pub fn version_hash(&self) -> u64 {
        let mut h = fnv1a(
            format!(
                "{}|{}|{}|{}|{}|{}|{}|{}|{}",
                self.config.dim,
                self.config.vocab_size,
                self.config.image_dim,
                self.config.max_text_tokens,
                self.config.layers,
                self.config.heads,
                self.config.ffn_mult,
                self.config.modality_mask.text,
                self.config.modality_mask.image,
            )
            .as_bytes(),
        );
        for p in self.parameters() {
            h = fnv1a_f64(h, p.value.data());
        }
        h
    }

    /// Trace one item's encoding into `g`; returns the `[1, d]` readout at
    /// the `cur_item` position. `mask` overrides the configured modality
    /// mask (used by alignment pretraining's two views).
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        vars: &ItemEncoderVars,
        record: &ItemRecord,
        mask: Option<ModalityMask>,
    ) -> Result<Var> {
        let mask = mask.unwrap_or(self.config.modality_mask);
        if !mask.text && !mask.image {
            return Err(MolarError::Config(
                "item encoder: both modalities masked out".into(),
            ));
        }
        let mut rows: Vec<Var> = Vec::new();
        if mask.text {
            let mut tokens = tokenize(&record.title, &record.attributes, self.config.vocab_size);
            tokens.truncate(self.config.max_text_tokens);
            if !tokens.is_empty() {
                let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
                rows.push(g.gather_rows(vars.token_table, &idx)?);
            }
        }
        if mask.image {
            if let Some(features) = &record.image_features {
                if features.len() != self.config.image_dim {
                    return Err(MolarError::Shape(format!(
                        "item {}: image feature dim {} vs configured {}",
                        record.item_id,
                        features.len(),
                        self.config.image_dim
                    )));
                }
                let f = g.leaf(Tensor::matrix(1, features.len(), features.clone())?);
                rows.push(g.matmul(f, vars.image_proj)?);
            }
        }
        rows.push(g.gather_rows(vars.cur_item_token, &[0])?);

        let seq = g.concat_rows(&rows)?;
        let len = g.value(seq).rows();
        let pos = g.slice_rows(vars.pos_emb, 0, len)?;
        let mut h = g.add(seq, pos)?;
        for block in &vars.blocks {
            h = attention_block(g, h, block, false)?;
        }
        g.slice_rows(h, len - 1, 1)
    }

    /// Encode one item outside any training graph.
    pub fn encode_item(&self, record: &ItemRecord) -> Result<ItemEmbedding> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = self.encode_graph(&mut g, &vars, record, None)?;
        Ok(ItemEmbedding {
            item_id: record.item_id,
            vector: g.value(out).data().to_vec(),
            encoder_version: self.version_hash(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ItemEncoderConfig {
        ItemEncoderConfig {
            dim: 8,
            vocab_size: 64,
            image_dim: 4,
            max_text_tokens: 6,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            modality_mask: ModalityMask::both(),
        }
    }

    fn sample_record() -> ItemRecord {
        ItemRecord::new(3, "red shirt cotton")
            .with_attribute("price", "10")
            .with_image_features(vec![0.5, -0.25, 1.0, 0.1])
    }

    #[test]
    fn output_dimension_is_d() {
        let enc = ItemEncoder::new(tiny_config(), 1).unwrap();
        let emb = enc.encode_item(&sample_record()).unwrap();
        assert_eq!(emb.vector.len(), 8);
        assert!(emb.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = ItemEncoder::new(tiny_config(), 1).unwrap();
        let a = enc.encode_item(&sample_record()).unwrap();
        let b = enc.encode_item(&sample_record()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn modality_mask_changes_the_embedding() {
        let mut cfg = tiny_config();
        let enc = ItemEncoder::new(cfg, 2).unwrap();
        let both = enc.encode_item(&sample_record()).unwrap();
        cfg.modality_mask = ModalityMask::text_only();
        let enc_text = ItemEncoder::new(cfg, 2).unwrap();
        let text = enc_text.encode_item(&sample_record()).unwrap();
        assert_ne!(both.vector, text.vector);
    }

    #[test]
    fn both_modalities_masked_is_a_config_error() {
        let mut cfg = tiny_config();
        cfg.modality_mask = ModalityMask {
            text: false,
            image: false,
        };
        let enc = ItemEncoder::new(cfg, 3).unwrap();
        assert!(enc.encode_item(&sample_record()).is_err());
    }

    #[test]
    fn param_update_changes_version_hash() {
        let mut enc = ItemEncoder::new(tiny_config(), 4).unwrap();
        let before = enc.version_hash();
        enc.token_table.value.data_mut()[0] += 0.1;
        assert_ne!(before, enc.version_hash());
    }

    #[test]
    fn zeroed_positional_embeddings_make_token_order_irrelevant() {
        let mut enc = ItemEncoder::new(tiny_config(), 5).unwrap();
        enc.pos_emb.value.data_mut().fill(0.0);
        let a = enc
            .encode_item(&ItemRecord::new(0, "alpha beta gamma"))
            .unwrap();
        let b = enc
            .encode_item(&ItemRecord::new(0, "gamma alpha beta"))
            .unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        // with positional embeddings restored, order matters
        let enc = ItemEncoder::new(tiny_config(), 5).unwrap();
        let a = enc
            .encode_item(&ItemRecord::new(0, "alpha beta gamma"))
            .unwrap();
        let b = enc
            .encode_item(&ItemRecord::new(0, "gamma alpha beta"))
            .unwrap();
        let diff: f64 = a
            .vector
            .iter()
            .zip(&b.vector)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn readout_gradient_reaches_every_input_position() {
        // non-causal attention: the cur_item readout must receive gradient
        // from every token row; finite differences confirm nonzero gradients
        let cfg = tiny_config();
        let enc = ItemEncoder::new(cfg, 6).unwrap();
        let record = ItemRecord::new(0, "one two three");
        let tokens = tokenize(&record.title, &record.attributes, cfg.vocab_size);
        assert_eq!(tokens.len(), 3);

        let mut g = Graph::new();
        let vars = enc.bind(&mut g, true);
        let out = enc.encode_graph(&mut g, &vars, &record, None).unwrap();
        let loss = g.sum_all(out);
        let grads = g.backward(loss).unwrap();
        let table_grad = grads.get(vars.token_table).unwrap();
        for &t in &tokens {
            let row = table_grad.row(t as usize);
            let norm: f64 = row.iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "token {t} received no gradient");
        }
    }

    #[test]
    fn wrong_image_dim_is_rejected() {
        let enc = ItemEncoder::new(tiny_config(), 7).unwrap();
        let record = ItemRecord::new(0, "x").with_image_features(vec![1.0, 2.0]);
        assert!(enc.encode_item(&record).is_err());
    }
}
