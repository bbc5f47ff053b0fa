//! Post-alignment ablation: sweep the alignment weight alpha (alpha = 0 is
//! the "without contrastive alignment" configuration) on synthetic data
//! whose content and ID signals are complementary, and report test NDCG@10
//! per seed.
//!
//! Run with: cargo run --release --example ablation_sweep

use molar::data::{generate_synthetic_dataset, leave_one_out_split, SyntheticSpec};
use molar::trainer::{
    pretrain_partner, run_stage1, run_stage2, MolarBundle, Stage2Options, TrainingConfig,
};

fn main() -> molar::Result<()> {
    let alphas = [0.0, 0.05, 0.1, 0.5];
    let seeds = [1u64, 2, 3];
    let env_f = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let env_u = |k: &str, d: usize| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let mode = std::env::var("SWEEP_MODE").unwrap_or_else(|_| "frozen".into());

    let mut results = vec![vec![0.0; seeds.len()]; alphas.len()];
    for (si, &seed) in seeds.iter().enumerate() {
        let spec = SyntheticSpec {
            num_users: 600,
            num_items: 200,
            latent_dim: 8,
            sequence_length: 12,
            content_signal_weight: 0.5,
            id_signal_weight: 0.5,
            image_dim: env_u("SWEEP_IMGDIM", 8),
            seed: 1000 + seed,
        };
        let dataset = generate_synthetic_dataset(&spec)?;
        let mut config = TrainingConfig {
            d: 16,
            max_seq_len: 8,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            vocab_size: 512,
            image_dim: env_u("SWEEP_IMGDIM", 8),
            max_text_tokens: 8,
            max_epochs: env_u("SWEEP_EPOCHS", 10),
            batch_size: 128,
            max_lr: 3e-3,
            max_windows_per_user: 4,
            tau: env_f("SWEEP_TAU", 0.2),
            k_comparative: env_u("SWEEP_K", 16),
            encoder_freeze: std::env::var("SWEEP_FREEZE").map(|v| v == "1").unwrap_or(true),
            id_model_mode: match mode.as_str() {
                "tuned" => molar::trainer::IdModelMode::Tuned,
                "joint" => molar::trainer::IdModelMode::Joint,
                _ => molar::trainer::IdModelMode::Frozen,
            },
            stage1_epochs: env_u("SWEEP_S1EPOCHS", 3),
            stage1_batch_size: 128,
            stage1_max_lr: 3e-3,
            id_pretrain_epochs: 10,
            id_pretrain_max_lr: 3e-3,
            eval_ks: vec![10],
            validate_every: 2,
            seed,
            ..Default::default()
        };
        config.validate()?;

        let split = leave_one_out_split(&dataset, config.max_seq_len, 3)?;
        // stage 1 and the ID pretrain do not depend on alpha: share them
        let mut base = MolarBundle::new(&config, split.num_users(), split.num_items)?;
        run_stage1(&mut base, &dataset, &config)?;
        if let Some(log) = pretrain_partner(&mut base, &split, &config)? {
            println!("seed {seed}: id model validation N@10 {:.4}", log.validation.ndcg(10));
        }
        let enc_params: Vec<_> = base.encoder.parameters().iter().map(|p| p.value.clone()).collect();
        let id_params: Vec<_> = base
            .id_model
            .as_ref()
            .map(|m| m.parameters().iter().map(|p| p.value.clone()).collect())
            .unwrap_or_default();

        for (ai, &alpha) in alphas.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.alpha = alpha;
            cfg.validate()?;
            let mut bundle = MolarBundle::new(&cfg, split.num_users(), split.num_items)?;
            for (p, v) in bundle.encoder.parameters_mut().into_iter().zip(&enc_params) {
                p.value = v.clone();
            }
            if let Some(model) = bundle.id_model.as_mut() {
                for (p, v) in model.parameters_mut().into_iter().zip(&id_params) {
                    p.value = v.clone();
                }
            }
            let out = run_stage2(&mut bundle, &dataset, &split, &cfg, Stage2Options::default())?;
            let ndcg = out.test_report.unwrap().ndcg(10);
            results[ai][si] = ndcg;
            println!("seed {seed} alpha {alpha:<5} -> test N@10 {ndcg:.4}");
        }
    }

    println!("\nalpha    mean N@10");
    for (ai, &alpha) in alphas.iter().enumerate() {
        let mean = results[ai].iter().sum::<f64>() / seeds.len() as f64;
        println!("{alpha:<8} {mean:.4}");
    }
    Ok(())
}
