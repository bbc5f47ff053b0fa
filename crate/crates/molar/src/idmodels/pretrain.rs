//! Stage-0 pretraining of an ID model: point-wise BCE with 1:1 uniform
//! negatives over sliding training windows, Adam with warmup+cosine decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::negative::NegativeSampler;
use crate::data::split::SplitDataset;
use crate::error::{MolarError, Result};
use crate::eval::{evaluate, EvalSplit, MetricsReport, Scorer};
use crate::idmodels::IdModel;
use crate::numcore::adam::AdamState;
use crate::numcore::graph::Graph;
use crate::numcore::param::clip_global_norm;
use crate::numcore::schedule::LrSchedule;
use crate::numcore::tensor::Tensor;
use crate::objectives::bce_loss_graph;

#[derive(Clone, Copy, Debug)]
pub struct IdPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub max_windows_per_user: usize,
    pub seed: u64,
}

impl Default for IdPretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            max_lr: 1e-3,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            max_windows_per_user: 0,
            seed: 23,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IdPretrainLog {
    pub losses: Vec<f64>,
    pub validation: MetricsReport,
}

/// Scorer over the ID model for evaluation.
pub struct IdScorer<'a> {
    pub model: &'a IdModel,
    factors: Tensor,
}

impl<'a> IdScorer<'a> {
    pub fn new(model: &'a IdModel) -> Self {
        Self {
            model,
            factors: model.item_factor_matrix(),
        }
    }
}

impl Scorer for IdScorer<'_> {
    fn num_items(&self) -> usize {
        self.model.num_items()
    }

    fn score_all(&self, user: &crate::data::split::SplitUser, input: &[u64]) -> Result<Vec<f64>> {
        let e = self.model.user_embedding(user.user_id, input)?;
        let n = self.factors.rows();
        let d = self.factors.cols();
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.factors.data()[i * d..(i + 1) * d];
            scores.push(e.iter().zip(row).map(|(a, b)| a * b).sum());
        }
        Ok(scores)
    }
}

/// Train the model in place; returns per-step losses and final validation
/// metrics (N/R at 10).
pub fn pretrain_id_model(
    model: &mut IdModel,
    split: &SplitDataset,
    cfg: &IdPretrainConfig,
) -> Result<IdPretrainLog> {
    let windows = split.train_windows(cfg.max_windows_per_user);
    if windows.is_empty() {
        return Err(MolarError::Data(
            "no training windows; every user is too short".into(),
        ));
    }
    let sampler = NegativeSampler::new(split.num_items)?;
    let batches_per_epoch = windows.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let warmup = ((total_steps as f64) * cfg.warmup_frac).round() as u64;
    let schedule = LrSchedule::new(
        cfg.max_lr,
        warmup.min(total_steps.saturating_sub(1)),
        total_steps.max(1),
    )?;

    let mut adam = AdamState::new(&model.parameters());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order = windows.clone();
        let mut epoch_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
        order.shuffle(&mut epoch_rng);
        for batch in order.chunks(cfg.batch_size) {
            let lr = schedule.lr(step);
            model.zero_grads();

            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let mut user_rows = Vec::with_capacity(batch.len());
            let mut pos_items = Vec::with_capacity(batch.len());
            let mut neg_items = Vec::with_capacity(batch.len());
            for w in batch {
                let user = &split.users[w.user_index];
                let input = split.window_input(w);
                let target = split.window_target(w);
                let mut exclude = input.to_vec();
                exclude.push(target);
                let neg = sampler.sample(&mut rng, target, &exclude);
                user_rows.push(model.user_embedding_graph(&mut g, &vars, user.user_id, input)?);
                pos_items.push(target);
                neg_items.push(neg);
            }
            let users = g.concat_rows(&user_rows)?;
            let pos_f = model.item_factor_graph(&mut g, &vars, &pos_items)?;
            let neg_f = model.item_factor_graph(&mut g, &vars, &neg_items)?;
            let pos_scores = g.row_dot(users, pos_f)?;
            let neg_scores = g.row_dot(users, neg_f)?;
            let loss = bce_loss_graph(&mut g, pos_scores, neg_scores)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(MolarError::Training(format!(
                    "id-model loss became non-finite at step {step}"
                )));
            }
            let grads = g.backward(loss)?;
            model.accumulate_grads(&vars, &grads);
            let mut params = model.parameters_mut();
            clip_global_norm(&mut params, cfg.grad_clip);
            adam.update(&mut params, lr)?;

            losses.push(loss_value);
            step += 1;
        }
    }

    let validation = {
        let scorer = IdScorer::new(model);
        evaluate(&scorer, split, &[10], EvalSplit::Validation, "id-pretrain")?
    };
    Ok(IdPretrainLog { losses, validation })
}
