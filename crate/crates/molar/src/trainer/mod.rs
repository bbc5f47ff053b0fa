//! Two-stage training orchestration.
//!
//! Stage 1 aligns the item encoder's text and image views (InfoNCE over
//! modality-masked encodings). Stage 2 jointly optimizes the user model
//! against the point-wise BCE recommendation loss plus `alpha` times the
//! ID/content alignment loss, with Adam, warmup+cosine learning rates,
//! global-norm gradient clipping, validation-based model selection, and
//! bit-exact checkpoint resume.

pub mod checkpoint;
pub mod config;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::interactions::Dataset;
use crate::data::negative::NegativeSampler;
use crate::data::split::{SplitDataset, SplitUser, TrainWindow};
use crate::error::{MolarError, Result};
use crate::eval::{evaluate, EvalSplit, MetricsReport, Scorer};
use crate::idmodels::{IdModel, IdModelVars};
use crate::itemrep::cache::{batch_encode, EmbeddingCache};
use crate::itemrep::encoder::{ItemEncoder, ItemEncoderConfig, ItemEmbedding};
use crate::itemrep::pretrain::{pretrain_alignment, AlignmentPretrainConfig, AlignmentPretrainLog};
use crate::itemrep::record::ItemRecord;
use crate::numcore::adam::AdamState;
use crate::numcore::fnv1a;
use crate::numcore::graph::{Graph, Var};
use crate::numcore::param::clip_global_norm;
use crate::numcore::schedule::LrSchedule;
use crate::numcore::tensor::Tensor;
use crate::objectives::{align_loss_graph, bce_loss_graph};
use crate::dueg::{DuegConfig, DuegModel};

pub use checkpoint::{AdamBlob, BestState, Checkpoint, LossRow};
pub use config::{IdModelMode, PostAlignmentModel, TrainingConfig};

/// Derive a named sub-seed from the master seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    fnv1a(format!("{label}:{seed}").as_bytes())
}

/// Encoder + user model + optional alignment partner.
pub struct MolarBundle {
    pub encoder: ItemEncoder,
    pub dueg: DuegModel,
    pub id_model: Option<IdModel>,
}

impl MolarBundle {
    pub fn new(config: &TrainingConfig, num_users: usize, num_items: usize) -> Result<Self> {
        let enc_cfg = ItemEncoderConfig {
            dim: config.d,
            vocab_size: config.vocab_size,
            image_dim: config.image_dim,
            max_text_tokens: config.max_text_tokens,
            layers: config.layers,
            heads: config.heads,
            ffn_mult: config.ffn_mult,
            modality_mask: config.modality_mask(),
        };
        let encoder = ItemEncoder::new(enc_cfg, derive_seed(config.seed, "encoder"))?;
        let dueg = DuegModel::new(
            DuegConfig {
                dim: config.d,
                max_seq_len: config.max_seq_len,
                layers: config.layers,
                heads: config.heads,
                ffn_mult: config.ffn_mult,
                input_projection: config.input_projection,
            },
            derive_seed(config.seed, "dueg"),
        )?;
        let id_model = match config.post_alignment_model.kind() {
            Some(kind) => Some(IdModel::new(
                kind,
                num_users,
                num_items,
                config.d,
                config.max_seq_len,
                config.layers,
                config.heads,
                derive_seed(config.seed, "id-model"),
            )?),
            None => None,
        };
        Ok(Self {
            encoder,
            dueg,
            id_model,
        })
    }
}

/// Scores users through the content path: encoder embeddings -> user model
/// -> dot products against every item embedding.
pub struct ContentScorer<'a> {
    dueg: &'a DuegModel,
    item_matrix: Tensor,
}

impl<'a> ContentScorer<'a> {
    pub fn build(
        encoder: &ItemEncoder,
        dueg: &'a DuegModel,
        catalog: &[ItemRecord],
        cache: &EmbeddingCache,
    ) -> Result<Self> {
        let refs: Vec<&ItemRecord> = catalog.iter().collect();
        let embs = batch_encode(&refs, encoder, cache)?;
        Ok(Self::from_embeddings(dueg, &embs, catalog.len())?)
    }

    pub fn from_embeddings(
        dueg: &'a DuegModel,
        embeddings: &[ItemEmbedding],
        num_items: usize,
    ) -> Result<Self> {
        let d = dueg.config.dim;
        let mut data = vec![0.0; num_items * d];
        for e in embeddings {
            if e.vector.len() != d {
                return Err(MolarError::Shape(format!(
                    "item {} embedding dim {} vs model dim {d}",
                    e.item_id,
                    e.vector.len()
                )));
            }
            let row = e.item_id as usize;
            if row >= num_items {
                return Err(MolarError::Data(format!("item id {row} out of range")));
            }
            data[row * d..(row + 1) * d].copy_from_slice(&e.vector);
        }
        Ok(Self {
            dueg,
            item_matrix: Tensor::matrix(num_items, d, data)?,
        })
    }

    pub fn item_matrix(&self) -> &Tensor {
        &self.item_matrix
    }
}

impl Scorer for ContentScorer<'_> {
    fn num_items(&self) -> usize {
        self.item_matrix.rows()
    }

    fn score_all(&self, _user: &SplitUser, input: &[u64]) -> Result<Vec<f64>> {
        let items: Vec<Vec<f64>> = input
            .iter()
            .map(|&i| self.item_matrix.row(i as usize).to_vec())
            .collect();
        let user_emb = self.dueg.forward(&items)?;
        let n = self.item_matrix.rows();
        let d = self.item_matrix.cols();
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.item_matrix.data()[i * d..(i + 1) * d];
            scores.push(user_emb.iter().zip(row).map(|(a, b)| a * b).sum());
        }
        Ok(scores)
    }
}

/// Stage 1: modality alignment of the item encoder. Disabled stage 1 (the
/// "w/o IT" ablation) returns the encoder untouched with an empty log.
pub fn run_stage1(
    bundle: &mut MolarBundle,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<AlignmentPretrainLog> {
    if !config.stage1_enabled || !config.modality_text || !config.modality_image {
        return Ok(AlignmentPretrainLog::default());
    }
    let cfg = AlignmentPretrainConfig {
        tau: config.stage1_tau,
        batch_size: config.stage1_batch_size,
        epochs: config.stage1_epochs,
        max_lr: config.stage1_max_lr,
        warmup_frac: config.warmup_frac,
        grad_clip: config.grad_clip,
        seed: derive_seed(config.seed, "stage1"),
    };
    pretrain_alignment(&mut bundle.encoder, &dataset.catalog, &cfg)
}

/// Pretrain the ID partner with BCE (skipped in `joint` mode, where it
/// learns from scratch during stage 2).
pub fn pretrain_partner(
    bundle: &mut MolarBundle,
    split: &SplitDataset,
    config: &TrainingConfig,
) -> Result<Option<crate::idmodels::IdPretrainLog>> {
    let Some(model) = bundle.id_model.as_mut() else {
        return Ok(None);
    };
    if config.id_model_mode == IdModelMode::Joint {
        return Ok(None);
    }
    let cfg = crate::idmodels::IdPretrainConfig {
        epochs: config.id_pretrain_epochs,
        batch_size: config.batch_size,
        max_lr: config.id_pretrain_max_lr,
        warmup_frac: config.warmup_frac,
        grad_clip: config.grad_clip,
        max_windows_per_user: config.max_windows_per_user,
        seed: derive_seed(config.seed, "id-pretrain"),
    };
    Ok(Some(crate::idmodels::pretrain_id_model(model, split, &cfg)?))
}

#[derive(Default)]
pub struct Stage2Options {
    pub resume: Option<Checkpoint>,
    /// Stop (and return an unfinished checkpoint) once this many global
    /// steps have been taken.
    pub stop_after_steps: Option<u64>,
}

pub struct Stage2Outcome {
    pub finished: bool,
    pub test_report: Option<MetricsReport>,
    pub val_curve: Vec<(u32, f64)>,
    pub losses: Vec<LossRow>,
    pub best_epoch: Option<u32>,
    pub best_val_ndcg: Option<f64>,
    pub checkpoint: Checkpoint,
}

struct TrainState {
    epoch: u32,
    step_in_epoch: u32,
    global_step: u64,
    neg_rng: ChaCha20Rng,
    adam_main: AdamState,
    adam_id: Option<AdamState>,
    best: Option<BestState>,
    val_curve: Vec<(u32, f64)>,
    losses: Vec<LossRow>,
}

fn params_values(params: &[&crate::numcore::param::Parameter]) -> Vec<Tensor> {
    params.iter().map(|p| p.value.clone()).collect()
}

fn restore_values(
    params: &mut [&mut crate::numcore::param::Parameter],
    values: &[Tensor],
    what: &str,
) -> Result<()> {
    if params.len() != values.len() {
        return Err(MolarError::Format(format!(
            "checkpoint holds {} tensors for {what}, model has {}",
            values.len(),
            params.len()
        )));
    }
    for (p, v) in params.iter_mut().zip(values) {
        if p.value.shape() != v.shape() {
            return Err(MolarError::Format(format!(
                "checkpoint tensor shape {:?} vs expected {:?} for '{}'",
                v.shape(),
                p.value.shape(),
                p.name
            )));
        }
        p.value = v.clone();
    }
    Ok(())
}

/// Stage 2: joint optimization under `bce + alpha * align`.
pub fn run_stage2(
    bundle: &mut MolarBundle,
    dataset: &Dataset,
    split: &SplitDataset,
    config: &TrainingConfig,
    options: Stage2Options,
) -> Result<Stage2Outcome> {
    let windows = split.train_windows(config.max_windows_per_user);
    if windows.is_empty() {
        return Err(MolarError::Data(
            "no training windows; every user is too short".into(),
        ));
    }
    let sampler = NegativeSampler::new(split.num_items)?;
    let batches_per_epoch = windows.len().div_ceil(config.batch_size);
    let total_steps = (config.max_epochs * batches_per_epoch) as u64;
    let warmup = ((total_steps as f64) * config.warmup_frac).round() as u64;
    let schedule = LrSchedule::new(
        config.max_lr,
        warmup.min(total_steps.saturating_sub(1)),
        total_steps.max(1),
    )?;

    let encoder_trainable = !config.encoder_freeze;
    let id_trainable = bundle.id_model.is_some() && config.id_model_mode != IdModelMode::Frozen;
    let cache = EmbeddingCache::new();

    // assemble optimizer state, fresh or from the checkpoint
    let mut state = match options.resume {
        Some(ckpt) => restore_state(bundle, config, split, ckpt, encoder_trainable, id_trainable)?,
        None => {
            let main_params = main_param_refs(bundle, encoder_trainable);
            let adam_main = AdamState::new(&main_params);
            let adam_id = if id_trainable {
                Some(AdamState::new(&bundle.id_model.as_ref().unwrap().parameters()))
            } else {
                None
            };
            TrainState {
                epoch: 0,
                step_in_epoch: 0,
                global_step: 0,
                neg_rng: ChaCha20Rng::seed_from_u64(derive_seed(config.seed, "stage2-neg")),
                adam_main,
                adam_id,
                best: None,
                val_curve: Vec::new(),
                losses: Vec::new(),
            }
        }
    };

    let mut stopped_early = false;
    'epochs: for epoch in state.epoch..config.max_epochs as u32 {
        let mut order = windows.clone();
        let mut shuffle_rng =
            ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let skip = if epoch == state.epoch { state.step_in_epoch as usize } else { 0 };
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            if bi < skip {
                continue;
            }
            if let Some(limit) = options.stop_after_steps {
                if state.global_step >= limit {
                    state.epoch = epoch;
                    state.step_in_epoch = bi as u32;
                    stopped_early = true;
                    break 'epochs;
                }
            }
            let lr = schedule.lr(state.global_step);
            let row = train_step(bundle, split, dataset, config, batch, &sampler, &mut state, lr, &cache)?;
            state.losses.push(row);
            state.global_step += 1;
        }
        state.step_in_epoch = 0;
        state.epoch = epoch + 1;

        // validation + model selection (every validate_every-th epoch and
        // always the last)
        let is_last = epoch as usize + 1 == config.max_epochs;
        if !is_last && (epoch as usize + 1) % config.validate_every.max(1) != 0 {
            continue;
        }
        let val = {
            let scorer =
                ContentScorer::build(&bundle.encoder, &bundle.dueg, &dataset.catalog, &cache)?;
            evaluate(&scorer, split, &[10], EvalSplit::Validation, "stage2-val")?.ndcg(10)
        };
        state.val_curve.push((epoch, val));
        let improved = state.best.as_ref().map_or(true, |b| val > b.val_ndcg);
        if improved {
            state.best = Some(BestState {
                val_ndcg: val,
                epoch,
                encoder: params_values(&bundle.encoder.parameters()),
                dueg: params_values(&bundle.dueg.parameters()),
                id: bundle
                    .id_model
                    .as_ref()
                    .map(|m| params_values(&m.parameters())),
            });
        }
    }

    if stopped_early {
        let checkpoint = capture_state(bundle, config, split, &state);
        return Ok(Stage2Outcome {
            finished: false,
            test_report: None,
            best_epoch: state.best.as_ref().map(|b| b.epoch),
            best_val_ndcg: state.best.as_ref().map(|b| b.val_ndcg),
            val_curve: state.val_curve,
            losses: state.losses,
            checkpoint,
        });
    }

    // restore the validation-selected parameters before the test pass
    if let Some(best) = &state.best {
        restore_values(&mut bundle.encoder.parameters_mut(), &best.encoder, "encoder")?;
        restore_values(&mut bundle.dueg.parameters_mut(), &best.dueg, "user model")?;
        if let (Some(model), Some(vals)) = (bundle.id_model.as_mut(), best.id.as_ref()) {
            restore_values(&mut model.parameters_mut(), vals, "id model")?;
        }
    }

    let test_report = {
        let scorer = ContentScorer::build(&bundle.encoder, &bundle.dueg, &dataset.catalog, &cache)?;
        evaluate(
            &scorer,
            split,
            &config.eval_ks,
            EvalSplit::Test,
            &format!("{:016x}", config.fingerprint()),
        )?
    };

    let checkpoint = capture_state(bundle, config, split, &state);
    Ok(Stage2Outcome {
        finished: true,
        test_report: Some(test_report),
        best_epoch: state.best.as_ref().map(|b| b.epoch),
        best_val_ndcg: state.best.as_ref().map(|b| b.val_ndcg),
        val_curve: state.val_curve,
        losses: state.losses,
        checkpoint,
    })
}

fn main_param_refs<'a>(
    bundle: &'a MolarBundle,
    encoder_trainable: bool,
) -> Vec<&'a crate::numcore::param::Parameter> {
    let mut out = bundle.dueg.parameters();
    if encoder_trainable {
        out.extend(bundle.encoder.parameters());
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    bundle: &mut MolarBundle,
    split: &SplitDataset,
    dataset: &Dataset,
    config: &TrainingConfig,
    batch: &[TrainWindow],
    sampler: &NegativeSampler,
    state: &mut TrainState,
    lr: f64,
    cache: &EmbeddingCache,
) -> Result<LossRow> {
    let encoder_trainable = !config.encoder_freeze;
    let id_trainable = bundle.id_model.is_some() && config.id_model_mode != IdModelMode::Frozen;

    bundle.dueg.zero_grads();
    if encoder_trainable {
        bundle.encoder.zero_grads();
    }
    if let Some(m) = bundle.id_model.as_mut() {
        m.zero_grads();
    }

    // negatives drawn first, in window order, so the RNG stream is stable
    let mut negs = Vec::with_capacity(batch.len());
    let mut extra_negs: Vec<Vec<u64>> = Vec::with_capacity(batch.len());
    for w in batch {
        let input = split.window_input(w);
        let target = split.window_target(w);
        let mut exclude = input.to_vec();
        exclude.push(target);
        negs.push(sampler.sample(&mut state.neg_rng, target, &exclude));
        if config.per_position_targets {
            let extras = (1..input.len())
                .map(|j| sampler.sample(&mut state.neg_rng, input[j], &exclude))
                .collect();
            extra_negs.push(extras);
        } else {
            extra_negs.push(Vec::new());
        }
    }

    // distinct items needed this step, in deterministic first-use order
    let mut item_index: HashMap<u64, usize> = HashMap::new();
    let mut item_order: Vec<u64> = Vec::new();
    let index_of = |item: u64, order: &mut Vec<u64>, index: &mut HashMap<u64, usize>| {
        *index.entry(item).or_insert_with(|| {
            order.push(item);
            order.len() - 1
        })
    };
    for (w, (neg, extras)) in batch.iter().zip(negs.iter().zip(&extra_negs)) {
        for &i in split.window_input(w) {
            index_of(i, &mut item_order, &mut item_index);
        }
        index_of(split.window_target(w), &mut item_order, &mut item_index);
        index_of(*neg, &mut item_order, &mut item_index);
        for &e in extras {
            index_of(e, &mut item_order, &mut item_index);
        }
    }

    let mut g = Graph::new();
    let enc_vars = bundle.encoder.bind(&mut g, encoder_trainable);
    let dueg_vars = bundle.dueg.bind(&mut g, true);
    let id_vars: Option<IdModelVars> = bundle
        .id_model
        .as_ref()
        .map(|m| m.bind(&mut g, id_trainable));

    // item embedding rows: traced through the encoder when it is co-trained,
    // otherwise pulled from the version-keyed cache as constants
    let item_rows: Var = if encoder_trainable {
        let mut rows = Vec::with_capacity(item_order.len());
        for &item in &item_order {
            let record = &dataset.catalog[item as usize];
            rows.push(bundle.encoder.encode_graph(&mut g, &enc_vars, record, None)?);
        }
        g.concat_rows(&rows)?
    } else {
        let records: Vec<&ItemRecord> = item_order
            .iter()
            .map(|&i| &dataset.catalog[i as usize])
            .collect();
        let embs = batch_encode(&records, &bundle.encoder, cache)?;
        let d = config.d;
        let mut data = Vec::with_capacity(embs.len() * d);
        for e in &embs {
            data.extend_from_slice(&e.vector);
        }
        g.leaf(Tensor::matrix(embs.len(), d, data)?)
    };

    // forward every window through the user model
    let mut econ_rows = Vec::with_capacity(batch.len());
    let mut user_rows = Vec::new();
    let mut pos_ids: Vec<u64> = Vec::new();
    let mut neg_ids: Vec<u64> = Vec::new();
    for (w, (neg, extras)) in batch.iter().zip(negs.iter().zip(&extra_negs)) {
        let input = split.window_input(w);
        let target = split.window_target(w);
        let idxs: Vec<usize> = input.iter().map(|i| item_index[i]).collect();
        let seq = g.gather_rows(item_rows, &idxs)?;
        if config.per_position_targets {
            let states = bundle.dueg.forward_states_graph(&mut g, &dueg_vars, seq)?;
            let econ = g.slice_rows(states, input.len(), 1)?;
            econ_rows.push(econ);
            user_rows.push(econ);
            pos_ids.push(target);
            neg_ids.push(*neg);
            for (j, &extra_neg) in extras.iter().enumerate() {
                // state after items[..=j] predicts items[j+1]
                let s = g.slice_rows(states, j, 1)?;
                user_rows.push(s);
                pos_ids.push(input[j + 1]);
                neg_ids.push(extra_neg);
            }
        } else {
            let econ = bundle.dueg.forward_graph(&mut g, &dueg_vars, seq)?;
            econ_rows.push(econ);
            user_rows.push(econ);
            pos_ids.push(target);
            neg_ids.push(*neg);
        }
    }

    let user_stack = g.concat_rows(&user_rows)?;
    let pos_idx: Vec<usize> = pos_ids.iter().map(|i| item_index[i]).collect();
    let neg_idx: Vec<usize> = neg_ids.iter().map(|i| item_index[i]).collect();
    let pos_emb = g.gather_rows(item_rows, &pos_idx)?;
    let neg_emb = g.gather_rows(item_rows, &neg_idx)?;
    let pos_scores = g.row_dot(user_stack, pos_emb)?;
    let neg_scores = g.row_dot(user_stack, neg_emb)?;
    let bce = bce_loss_graph(&mut g, pos_scores, neg_scores)?;

    // ID path: embeddings for alignment and, in joint mode, its own BCE
    let mut align_var: Option<Var> = None;
    let mut id_bce_var: Option<Var> = None;
    if let (Some(model), Some(vars)) = (bundle.id_model.as_ref(), id_vars.as_ref()) {
        let need_align = config.alpha > 0.0 && batch.len() >= 2;
        let need_bce = config.id_model_mode == IdModelMode::Joint;
        if need_align || need_bce {
            let mut eid_rows = Vec::with_capacity(batch.len());
            for w in batch {
                let user = &split.users[w.user_index];
                let input = split.window_input(w);
                eid_rows.push(model.user_embedding_graph(&mut g, vars, user.user_id, input)?);
            }
            let eid_stack = g.concat_rows(&eid_rows)?;
            if need_align {
                let econ_stack = g.concat_rows(&econ_rows)?;
                let k = if config.k_comparative == 0 {
                    batch.len()
                } else {
                    config.k_comparative.min(batch.len())
                };
                if k >= 2 {
                    align_var = Some(align_loss_graph(
                        &mut g, eid_stack, econ_stack, config.tau, k,
                    )?);
                }
            }
            if need_bce {
                let window_targets: Vec<u64> = batch
                    .iter()
                    .map(|w| split.window_target(w))
                    .collect();
                let pos_f = model.item_factor_graph(&mut g, vars, &window_targets)?;
                let neg_f = model.item_factor_graph(&mut g, vars, &negs)?;
                let ps = g.row_dot(eid_stack, pos_f)?;
                let ns = g.row_dot(eid_stack, neg_f)?;
                id_bce_var = Some(bce_loss_graph(&mut g, ps, ns)?);
            }
        }
    }

    let mut total = bce;
    if let Some(id_bce) = id_bce_var {
        total = g.add(total, id_bce)?;
    }
    if let Some(align) = align_var {
        let scaled = g.scale(align, config.alpha);
        total = g.add(total, scaled)?;
    }

    let bce_value = g.value(bce).item();
    let align_value = align_var.map_or(0.0, |v| g.value(v).item());
    let total_value = g.value(total).item();
    if !total_value.is_finite() {
        return Err(MolarError::Training(format!(
            "loss became non-finite at step {} (bce={bce_value}, align={align_value})",
            state.global_step
        )));
    }

    let grads = g.backward(total)?;
    bundle.dueg.accumulate_grads(&dueg_vars, &grads);
    if encoder_trainable {
        bundle.encoder.accumulate_grads(&enc_vars, &grads);
    }
    if id_trainable {
        if let (Some(model), Some(vars)) = (bundle.id_model.as_mut(), id_vars.as_ref()) {
            model.accumulate_grads(vars, &grads);
        }
    }

    // clip over every trainable parameter, then step per group
    let grad_norm = {
        let mut all: Vec<&mut crate::numcore::param::Parameter> = bundle.dueg.parameters_mut();
        if encoder_trainable {
            all.extend(bundle.encoder.parameters_mut());
        }
        if id_trainable {
            all.extend(bundle.id_model.as_mut().unwrap().parameters_mut());
        }
        clip_global_norm(&mut all, config.grad_clip)
    };
    {
        let mut main: Vec<&mut crate::numcore::param::Parameter> = bundle.dueg.parameters_mut();
        if encoder_trainable {
            main.extend(bundle.encoder.parameters_mut());
        }
        state.adam_main.update(&mut main, lr)?;
    }
    if id_trainable {
        let id_lr = lr * match config.id_model_mode {
            IdModelMode::Tuned => config.id_lr_scale,
            _ => 1.0,
        };
        let mut id_params = bundle.id_model.as_mut().unwrap().parameters_mut();
        state
            .adam_id
            .as_mut()
            .expect("adam state for trainable id model")
            .update(&mut id_params, id_lr)?;
    }

    Ok(LossRow {
        step: state.global_step,
        lr,
        bce: bce_value,
        align: align_value,
        total: total_value,
        grad_norm,
    })
}

fn capture_state(
    bundle: &MolarBundle,
    config: &TrainingConfig,
    split: &SplitDataset,
    state: &TrainState,
) -> Checkpoint {
    let (m, v) = state.adam_main.moments();
    let adam_main = AdamBlob {
        step: state.adam_main.step_count(),
        m: m.to_vec(),
        v: v.to_vec(),
    };
    let adam_id = state.adam_id.as_ref().map(|a| {
        let (m, v) = a.moments();
        AdamBlob {
            step: a.step_count(),
            m: m.to_vec(),
            v: v.to_vec(),
        }
    });
    Checkpoint {
        config_text: config.to_text(),
        num_users: split.num_users() as u32,
        num_items: split.num_items as u32,
        epoch: state.epoch,
        step_in_epoch: state.step_in_epoch,
        global_step: state.global_step,
        neg_rng_word_pos: state.neg_rng.get_word_pos(),
        encoder_params: params_values(&bundle.encoder.parameters()),
        dueg_params: params_values(&bundle.dueg.parameters()),
        id_params: bundle
            .id_model
            .as_ref()
            .map(|mdl| (mdl.kind(), params_values(&mdl.parameters()))),
        adam_main,
        adam_id,
        best: state.best.clone(),
        val_curve: state.val_curve.clone(),
        losses: state.losses.clone(),
    }
}

fn restore_state(
    bundle: &mut MolarBundle,
    config: &TrainingConfig,
    split: &SplitDataset,
    ckpt: Checkpoint,
    encoder_trainable: bool,
    id_trainable: bool,
) -> Result<TrainState> {
    let ckpt_config = TrainingConfig::from_text(&ckpt.config_text)?;
    if ckpt_config.fingerprint() != config.fingerprint() {
        return Err(MolarError::Format(
            "checkpoint was produced with a different configuration".into(),
        ));
    }
    if ckpt.num_users as usize != split.num_users() || ckpt.num_items as usize != split.num_items {
        return Err(MolarError::Format(format!(
            "checkpoint dataset dims ({} users, {} items) do not match ({}, {})",
            ckpt.num_users,
            ckpt.num_items,
            split.num_users(),
            split.num_items
        )));
    }
    restore_values(&mut bundle.encoder.parameters_mut(), &ckpt.encoder_params, "encoder")?;
    restore_values(&mut bundle.dueg.parameters_mut(), &ckpt.dueg_params, "user model")?;
    match (&mut bundle.id_model, &ckpt.id_params) {
        (Some(model), Some((kind, vals))) => {
            if model.kind() != *kind {
                return Err(MolarError::Format(
                    "checkpoint holds a different id-model kind".into(),
                ));
            }
            restore_values(&mut model.parameters_mut(), vals, "id model")?;
        }
        (None, None) => {}
        _ => {
            return Err(MolarError::Format(
                "checkpoint and configuration disagree about the id model".into(),
            ))
        }
    }

    let main_params = main_param_refs(bundle, encoder_trainable);
    if ckpt.adam_main.m.len() != main_params.len() {
        return Err(MolarError::Format(
            "checkpoint optimizer state does not match the trainable parameter set".into(),
        ));
    }
    let adam_main = AdamState::restore(ckpt.adam_main.m, ckpt.adam_main.v, ckpt.adam_main.step);
    let adam_id = match (id_trainable, ckpt.adam_id) {
        (true, Some(blob)) => Some(AdamState::restore(blob.m, blob.v, blob.step)),
        (false, None) => None,
        (true, None) => {
            return Err(MolarError::Format(
                "checkpoint is missing optimizer state for the id model".into(),
            ))
        }
        (false, Some(_)) => None,
    };
    let mut neg_rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, "stage2-neg"));
    neg_rng.set_word_pos(ckpt.neg_rng_word_pos);
    Ok(TrainState {
        epoch: ckpt.epoch,
        step_in_epoch: ckpt.step_in_epoch,
        global_step: ckpt.global_step,
        neg_rng,
        adam_main,
        adam_id,
        best: ckpt.best,
        val_curve: ckpt.val_curve,
        losses: ckpt.losses,
    })
}

/// Rebuild a bundle from a stored checkpoint (for evaluation or resume).
pub fn bundle_from_checkpoint(ckpt: &Checkpoint) -> Result<(MolarBundle, TrainingConfig)> {
    let config = TrainingConfig::from_text(&ckpt.config_text)?;
    let mut bundle = MolarBundle::new(&config, ckpt.num_users as usize, ckpt.num_items as usize)?;
    restore_values(&mut bundle.encoder.parameters_mut(), &ckpt.encoder_params, "encoder")?;
    restore_values(&mut bundle.dueg.parameters_mut(), &ckpt.dueg_params, "user model")?;
    if let (Some(model), Some((kind, vals))) = (bundle.id_model.as_mut(), &ckpt.id_params) {
        if model.kind() != *kind {
            return Err(MolarError::Format(
                "checkpoint holds a different id-model kind".into(),
            ));
        }
        restore_values(&mut model.parameters_mut(), vals, "id model")?;
    }
    Ok((bundle, config))
}

/// Write the loss log in the standard CSV layout.
pub fn write_losses_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,lr,bce,align,total,grad_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.bce, r.align, r.total, r.grad_norm
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Write the stage-1 loss curve (one row per logging interval).
pub fn write_stage1_csv(path: &Path, log: &AlignmentPretrainLog) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,lr,loss")?;
    for r in &log.rows {
        writeln!(out, "{},{},{}", r.step, r.lr, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::leave_one_out_split;
    use crate::data::synthetic::{generate_synthetic_dataset, SyntheticSpec};

    fn tiny_config() -> TrainingConfig {
        let mut cfg = TrainingConfig {
            d: 16,
            max_seq_len: 6,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            vocab_size: 256,
            image_dim: 4,
            max_text_tokens: 8,
            max_epochs: 2,
            batch_size: 32,
            max_lr: 1e-3,
            stage1_epochs: 1,
            stage1_batch_size: 32,
            id_pretrain_epochs: 1,
            eval_ks: vec![10],
            seed: 5,
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        generate_synthetic_dataset(&SyntheticSpec {
            num_users: 60,
            num_items: 30,
            latent_dim: 6,
            sequence_length: 8,
            content_signal_weight: 0.6,
            id_signal_weight: 0.6,
            image_dim: 4,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn stage2_runs_and_logs() {
        let cfg = tiny_config();
        let ds = tiny_dataset(1);
        let split = leave_one_out_split(&ds, cfg.max_seq_len, 3).unwrap();
        let mut bundle = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
        let out = run_stage2(&mut bundle, &ds, &split, &cfg, Stage2Options::default()).unwrap();
        assert!(out.finished);
        assert!(!out.losses.is_empty());
        assert_eq!(out.val_curve.len(), cfg.max_epochs);
        let report = out.test_report.unwrap();
        assert!(report.ndcg(10) >= 0.0 && report.ndcg(10) <= 1.0);
        // selected checkpoint's validation metric dominates the whole curve
        let best = out.best_val_ndcg.unwrap();
        for &(_, v) in &out.val_curve {
            assert!(best >= v);
        }
    }

    #[test]
    fn alpha_zero_logs_zero_alignment_and_applies_no_align_gradients() {
        let mut cfg = tiny_config();
        cfg.alpha = 0.0;
        let ds = tiny_dataset(2);
        let split = leave_one_out_split(&ds, cfg.max_seq_len, 3).unwrap();
        let mut bundle = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
        let out = run_stage2(&mut bundle, &ds, &split, &cfg, Stage2Options::default()).unwrap();
        assert!(out.losses.iter().all(|r| r.align == 0.0));
        assert!(out
            .losses
            .iter()
            .all(|r| (r.total - r.bce).abs() < 1e-15));
    }

    #[test]
    fn frozen_everything_only_updates_the_user_model() {
        let mut cfg = tiny_config();
        cfg.encoder_freeze = true;
        cfg.id_model_mode = IdModelMode::Frozen;
        cfg.max_epochs = 1;
        let ds = tiny_dataset(3);
        let split = leave_one_out_split(&ds, cfg.max_seq_len, 3).unwrap();
        let mut bundle = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
        let enc_before = params_values(&bundle.encoder.parameters());
        let id_before = params_values(&bundle.id_model.as_ref().unwrap().parameters());
        let dueg_before = params_values(&bundle.dueg.parameters());
        let out = run_stage2(&mut bundle, &ds, &split, &cfg, Stage2Options::default()).unwrap();
        // compare against the checkpoint's current parameters
        assert_eq!(out.checkpoint.encoder_params, enc_before);
        assert_eq!(
            out.checkpoint.id_params.as_ref().unwrap().1,
            id_before
        );
        assert_ne!(out.checkpoint.dueg_params, dueg_before);
    }

    #[test]
    fn stage2_is_deterministic() {
        let cfg = tiny_config();
        let ds = tiny_dataset(4);
        let split = leave_one_out_split(&ds, cfg.max_seq_len, 3).unwrap();
        let run = || {
            let mut bundle = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
            let out =
                run_stage2(&mut bundle, &ds, &split, &cfg, Stage2Options::default()).unwrap();
            out.losses.last().unwrap().total
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_exactly() {
        let cfg = tiny_config();
        let ds = tiny_dataset(5);
        let split = leave_one_out_split(&ds, cfg.max_seq_len, 3).unwrap();

        // straight run
        let mut full = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
        let full_out =
            run_stage2(&mut full, &ds, &split, &cfg, Stage2Options::default()).unwrap();

        // interrupted mid-epoch, then resumed
        let mut part = MolarBundle::new(&cfg, split.num_users(), split.num_items).unwrap();
        let halted = run_stage2(
            &mut part,
            &ds,
            &split,
            &cfg,
            Stage2Options {
                resume: None,
                stop_after_steps: Some(1),
            },
        )
        .unwrap();
        assert!(!halted.finished);
        let resumed = run_stage2(
            &mut part,
            &ds,
            &split,
            &cfg,
            Stage2Options {
                resume: Some(halted.checkpoint),
                stop_after_steps: None,
            },
        )
        .unwrap();
        assert!(resumed.finished);

        let a: Vec<u64> = full_out.losses.iter().map(|r| r.total.to_bits()).collect();
        let b: Vec<u64> = resumed.losses.iter().map(|r| r.total.to_bits()).collect();
        assert_eq!(a, b, "loss streams diverged after resume");
        assert_eq!(
            full_out.test_report.unwrap().ndcg(10).to_bits(),
            resumed.test_report.unwrap().ndcg(10).to_bits()
        );
    }

    #[test]
    fn stage1_disabled_leaves_encoder_untouched() {
        let mut cfg = tiny_config();
        cfg.stage1_enabled = false;
        let ds = tiny_dataset(6);
        let mut bundle = MolarBundle::new(&cfg, 10, ds.num_items()).unwrap();
        let before = params_values(&bundle.encoder.parameters());
        let log = run_stage1(&mut bundle, &ds, &cfg).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(params_values(&bundle.encoder.parameters()), before);
    }
}
