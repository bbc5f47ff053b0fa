//! Training configuration: defaults, the flat `key=value` config-file
//! format, validation, and the canonical fingerprint used by checkpoints
//! and manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MolarError, Result};
use crate::idmodels::IdModelKind;
use crate::itemrep::encoder::ModalityMask;
use crate::numcore::fnv1a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostAlignmentModel {
    None,
    Fpmc,
    Gru4Rec,
    Sasrec,
}

impl PostAlignmentModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "none" => Ok(Self::None),
            "fpmc" => Ok(Self::Fpmc),
            "gru4rec" => Ok(Self::Gru4Rec),
            "sasrec" => Ok(Self::Sasrec),
            other => Err(MolarError::Config(format!(
                "unknown post_alignment_model '{other}' (none|fpmc|gru4rec|sasrec)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Fpmc => "fpmc",
            Self::Gru4Rec => "gru4rec",
            Self::Sasrec => "sasrec",
        }
    }

    pub fn kind(&self) -> Option<IdModelKind> {
        match self {
            Self::None => None,
            Self::Fpmc => Some(IdModelKind::Fpmc),
            Self::Gru4Rec => Some(IdModelKind::Gru4Rec),
            Self::Sasrec => Some(IdModelKind::Sasrec),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdModelMode {
    Frozen,
    Tuned,
    Joint,
}

impl IdModelMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "frozen" => Ok(Self::Frozen),
            "tuned" => Ok(Self::Tuned),
            "joint" => Ok(Self::Joint),
            other => Err(MolarError::Config(format!(
                "unknown id_model_mode '{other}' (frozen|tuned|joint)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Frozen => "frozen",
            Self::Tuned => "tuned",
            Self::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    // embedding dimension shared by encoder, user model, and ID model
    pub d: usize,
    pub max_seq_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub image_dim: usize,
    pub max_text_tokens: usize,
    pub input_projection: bool,
    // optimization
    pub max_epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub max_windows_per_user: usize,
    // objective
    pub alpha: f64,
    pub tau: f64,
    /// 0 means "use the batch size".
    pub k_comparative: usize,
    pub per_position_targets: bool,
    // stage-2 wiring
    pub post_alignment_model: PostAlignmentModel,
    pub encoder_freeze: bool,
    pub id_model_mode: IdModelMode,
    pub id_lr_scale: f64,
    pub modality_text: bool,
    pub modality_image: bool,
    // stage 1 (image-text alignment pretraining)
    pub stage1_enabled: bool,
    pub stage1_epochs: usize,
    pub stage1_max_lr: f64,
    pub stage1_batch_size: usize,
    pub stage1_tau: f64,
    // ID-model pretraining (before stage 2, unless mode is joint)
    pub id_pretrain_epochs: usize,
    pub id_pretrain_max_lr: f64,
    // evaluation
    pub eval_ks: Vec<usize>,
    /// Validate (for model selection) every N epochs; the final epoch is
    /// always validated.
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            d: 64,
            max_seq_len: 10,
            layers: 2,
            heads: 2,
            ffn_mult: 4,
            vocab_size: 8192,
            image_dim: 32,
            max_text_tokens: 24,
            input_projection: true,
            max_epochs: 5,
            batch_size: 128,
            max_lr: 1e-4,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            max_windows_per_user: 0,
            alpha: 0.1,
            tau: 0.07,
            k_comparative: 0,
            per_position_targets: false,
            post_alignment_model: PostAlignmentModel::Sasrec,
            encoder_freeze: false,
            id_model_mode: IdModelMode::Tuned,
            id_lr_scale: 0.1,
            modality_text: true,
            modality_image: true,
            stage1_enabled: true,
            stage1_epochs: 5,
            stage1_max_lr: 1e-3,
            stage1_batch_size: 128,
            stage1_tau: 0.07,
            id_pretrain_epochs: 5,
            id_pretrain_max_lr: 1e-3,
            eval_ks: vec![10, 20, 50],
            validate_every: 1,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn modality_mask(&self) -> ModalityMask {
        ModalityMask {
            text: self.modality_text,
            image: self.modality_image,
        }
    }

    /// Apply one `key=value` assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| MolarError::Config(format!("config key '{key}': {what} '{value}'"));
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| bad(concat!("invalid ", stringify!($ty))))?
            };
        }
        let parse_bool = |v: &str| -> Result<bool> {
            match v.to_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(bad("invalid bool")),
            }
        };
        match key {
            "d" => self.d = parse!(usize),
            "max_seq_len" => self.max_seq_len = parse!(usize),
            "layers" => self.layers = parse!(usize),
            "heads" => self.heads = parse!(usize),
            "ffn_mult" => self.ffn_mult = parse!(usize),
            "vocab_size" => self.vocab_size = parse!(usize),
            "image_dim" => self.image_dim = parse!(usize),
            "max_text_tokens" => self.max_text_tokens = parse!(usize),
            "input_projection" => self.input_projection = parse_bool(value)?,
            "max_epochs" => self.max_epochs = parse!(usize),
            "batch_size" => self.batch_size = parse!(usize),
            "max_lr" => self.max_lr = parse!(f64),
            "warmup_frac" => self.warmup_frac = parse!(f64),
            "grad_clip" => self.grad_clip = parse!(f64),
            "max_windows_per_user" => self.max_windows_per_user = parse!(usize),
            "alpha" => self.alpha = parse!(f64),
            "tau" => self.tau = parse!(f64),
            "k_comparative" => self.k_comparative = parse!(usize),
            "per_position_targets" => self.per_position_targets = parse_bool(value)?,
            "post_alignment_model" => {
                self.post_alignment_model = PostAlignmentModel::parse(value)?
            }
            "encoder_freeze" => self.encoder_freeze = parse_bool(value)?,
            "id_model_mode" => self.id_model_mode = IdModelMode::parse(value)?,
            "id_lr_scale" => self.id_lr_scale = parse!(f64),
            "modality_text" => self.modality_text = parse_bool(value)?,
            "modality_image" => self.modality_image = parse_bool(value)?,
            "stage1_enabled" => self.stage1_enabled = parse_bool(value)?,
            "stage1_epochs" => self.stage1_epochs = parse!(usize),
            "stage1_max_lr" => self.stage1_max_lr = parse!(f64),
            "stage1_batch_size" => self.stage1_batch_size = parse!(usize),
            "stage1_tau" => self.stage1_tau = parse!(f64),
            "id_pretrain_epochs" => self.id_pretrain_epochs = parse!(usize),
            "id_pretrain_max_lr" => self.id_pretrain_max_lr = parse!(f64),
            "validate_every" => self.validate_every = parse!(usize),
            "eval_ks" => {
                self.eval_ks = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| bad("invalid k list")))
                    .collect::<Result<Vec<_>>>()?;
            }
            "seed" => self.seed = parse!(u64),
            _ => {
                return Err(MolarError::Config(format!(
                    "unknown config key '{key}'"
                )))
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file body over the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MolarError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MolarError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }

    /// Canonical serialization: every key in declaration order, one per line.
    pub fn to_text(&self) -> String {
        let ks: Vec<String> = self.eval_ks.iter().map(usize::to_string).collect();
        format!(
            "d={}\nmax_seq_len={}\nlayers={}\nheads={}\nffn_mult={}\nvocab_size={}\n\
             image_dim={}\nmax_text_tokens={}\ninput_projection={}\nmax_epochs={}\n\
             batch_size={}\nmax_lr={}\nwarmup_frac={}\ngrad_clip={}\nmax_windows_per_user={}\n\
             alpha={}\ntau={}\nk_comparative={}\nper_position_targets={}\n\
             post_alignment_model={}\nencoder_freeze={}\nid_model_mode={}\nid_lr_scale={}\n\
             modality_text={}\nmodality_image={}\nstage1_enabled={}\nstage1_epochs={}\n\
             stage1_max_lr={}\nstage1_batch_size={}\nstage1_tau={}\nid_pretrain_epochs={}\n\
             id_pretrain_max_lr={}\neval_ks={}\nvalidate_every={}\nseed={}\n",
            self.d,
            self.max_seq_len,
            self.layers,
            self.heads,
            self.ffn_mult,
            self.vocab_size,
            self.image_dim,
            self.max_text_tokens,
            self.input_projection,
            self.max_epochs,
            self.batch_size,
            self.max_lr,
            self.warmup_frac,
            self.grad_clip,
            self.max_windows_per_user,
            self.alpha,
            self.tau,
            self.k_comparative,
            self.per_position_targets,
            self.post_alignment_model.name(),
            self.encoder_freeze,
            self.id_model_mode.name(),
            self.id_lr_scale,
            self.modality_text,
            self.modality_image,
            self.stage1_enabled,
            self.stage1_epochs,
            self.stage1_max_lr,
            self.stage1_batch_size,
            self.stage1_tau,
            self.id_pretrain_epochs,
            self.id_pretrain_max_lr,
            ks.join(","),
            self.validate_every.max(1),
            self.seed,
        )
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    /// Normalize and check invariants. `post_alignment_model = none` forces
    /// `alpha = 0` (there is nothing to align against).
    pub fn validate(&mut self) -> Result<()> {
        if self.post_alignment_model == PostAlignmentModel::None {
            self.alpha = 0.0;
        }
        let mut problems = Vec::new();
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            problems.push(format!("d={} must be divisible by heads={}", self.d, self.heads));
        }
        if self.max_seq_len == 0 {
            problems.push("max_seq_len must be >= 1".into());
        }
        if self.alpha < 0.0 {
            problems.push(format!("alpha={} must be >= 0", self.alpha));
        }
        if self.tau <= 0.0 {
            problems.push(format!("tau={} must be > 0", self.tau));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if self.alpha > 0.0 && self.batch_size < 2 {
            problems.push("alpha > 0 needs batch_size >= 2 for in-batch negatives".into());
        }
        if self.k_comparative == 1 {
            problems.push("k_comparative must be 0 (= batch) or >= 2".into());
        }
        if !self.modality_text && !self.modality_image {
            problems.push("at least one modality must stay enabled".into());
        }
        if self.eval_ks.is_empty() {
            problems.push("eval_ks must not be empty".into());
        }
        if self.validate_every == 0 {
            self.validate_every = 1;
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MolarError::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = TrainingConfig::default();
        let parsed = TrainingConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, parsed);
        assert_eq!(cfg.fingerprint(), parsed.fingerprint());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainingConfig::from_text("nope=1\n").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = TrainingConfig::from_text("# comment\n\nd=32 # trailing\nheads=2\n").unwrap();
        assert_eq!(cfg.d, 32);
    }

    #[test]
    fn none_partner_forces_alpha_zero() {
        let cfg =
            TrainingConfig::from_text("post_alignment_model=none\nalpha=0.5\n").unwrap();
        assert_eq!(cfg.alpha, 0.0);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = TrainingConfig::from_text("max_lr=abc\n").unwrap_err();
        assert!(err.to_string().contains("max_lr"));
        let err = TrainingConfig::from_text("d=10\nheads=3\n").unwrap_err();
        assert!(err.to_string().contains("divisible"));
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let a = TrainingConfig::default();
        let mut b = TrainingConfig::default();
        b.seed = 43;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
