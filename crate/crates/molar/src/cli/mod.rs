//! Command-line surface: data preparation, corpus generation, training,
//! evaluation, gradient checks, and synthetic-data generation.
//!
//! Every command writes a `manifest.json` under its output directory with
//! the resolved configuration, input-file hashes, and timing, sufficient to
//! reproduce the run. Exit codes: 0 success, 1 runtime/training failure,
//! 2 usage/config error.

pub mod gradcheck;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::data::interactions::{build_dataset, load_interactions, Dataset};
use crate::data::split::{leave_one_out_split, SplitDataset};
use crate::data::synthetic::{generate_synthetic_dataset, write_synthetic_files, SyntheticSpec};
use crate::error::{MolarError, Result};
use crate::eval::{evaluate, EvalSplit};
use crate::itemrep::cache::EmbeddingCache;
use crate::itemrep::corpus::{
    generate_it_corpus, generate_sa_corpus, generate_ub_corpus, write_corpus_jsonl,
};
use crate::itemrep::embfile::save_embeddings;
use crate::itemrep::record::{read_items_jsonl, write_items_jsonl};
use crate::numcore::fnv1a;
use crate::trainer::{
    bundle_from_checkpoint, pretrain_partner, run_stage1, run_stage2, write_losses_csv,
    write_stage1_csv, Checkpoint, ContentScorer, MolarBundle, Stage2Options, TrainingConfig,
};

pub const ENV_THREADS: &str = "MOLAR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "molar", version, about = "Multimodal sequential recommendation pipeline")]
pub struct Cli {
    /// Worker-thread cap (overrides the MOLAR_THREADS environment variable).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest interaction and item files, build the leave-one-out split.
    Prepare {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Users with fewer interactions are dropped.
        #[arg(long, default_value_t = 3)]
        min_interactions: usize,
        #[arg(long, default_value_t = 10)]
        max_seq_len: usize,
    },
    /// Emit the fine-tuning corpora (IT / SA / UB) as JSONL.
    GenCorpus {
        /// it | sa | ub | all
        #[arg(long)]
        task: String,
        /// A directory produced by `prepare`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training stages and evaluate the selected model.
    Train {
        /// A directory produced by `prepare`.
        #[arg(long)]
        data: PathBuf,
        /// Flat key=value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1 | 2 | all
        #[arg(long, default_value = "all")]
        stage: String,
        /// wo-cl | wo-it | text-only | image-only
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra key=value config overrides (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Resume stage 2 from a MOLCKPT1 checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop stage 2 after this many optimizer steps (for later resume).
        #[arg(long)]
        stop_after_steps: Option<u64>,
        /// Start stage 2 from this stage-1 checkpoint instead of running
        /// stage 1 (only meaningful with --stage 2).
        #[arg(long)]
        stage1_ckpt: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out test targets.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated cutoff list.
        #[arg(long, default_value = "10,20,50")]
        k: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of analytic gradients.
    Gradcheck {
        /// numcore | itemrep | dueg | idmodels | objectives | all
        #[arg(long, default_value = "all")]
        component: String,
    },
    /// Generate a synthetic dataset in the standard interchange formats.
    Synth {
        /// Flat key=value spec file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: Option<String>,
    pub ablate: Option<String>,
    pub dataset_hashes: BTreeMap<String, String>,
    pub source_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

struct ManifestBuilder {
    command: String,
    resolved_config: Option<String>,
    ablate: Option<String>,
    dataset_hashes: BTreeMap<String, String>,
    started_unix: u64,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            resolved_config: None,
            ablate: None,
            dataset_hashes: BTreeMap::new(),
            started_unix: unix_now(),
            outputs: Vec::new(),
        }
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.dataset_hashes.insert(
            path.display().to_string(),
            format!("{:016x}", fnv1a(&bytes)),
        );
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            resolved_config: self.resolved_config,
            ablate: self.ablate,
            dataset_hashes: self.dataset_hashes,
            source_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started_unix,
            finished_unix: unix_now(),
            outputs: self.outputs,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Entry point used by the binary. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let threads = cli.threads.or_else(|| {
        std::env::var(ENV_THREADS)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // ignore the error when a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            interactions,
            items,
            out,
            min_interactions,
            max_seq_len,
        } => cmd_prepare(&interactions, &items, &out, min_interactions, max_seq_len),
        Command::GenCorpus { task, data, out } => cmd_gen_corpus(&task, &data, &out),
        Command::Train {
            data,
            config,
            stage,
            ablate,
            out,
            seed,
            set,
            resume,
            stop_after_steps,
            stage1_ckpt,
        } => cmd_train(TrainArgs {
            data,
            config,
            stage,
            ablate,
            out,
            seed,
            set,
            resume,
            stop_after_steps,
            stage1_ckpt,
        }),
        Command::Eval { ckpt, data, k, out } => cmd_eval(&ckpt, &data, &k, &out),
        Command::Gradcheck { component } => cmd_gradcheck(&component),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    }
}

// ── prepare ─────────────────────────────────────────────────────────

pub fn cmd_prepare(
    interactions_path: &Path,
    items_path: &Path,
    out: &Path,
    min_interactions: usize,
    max_seq_len: usize,
) -> Result<()> {
    if !interactions_path.exists() {
        return Err(MolarError::Config(format!(
            "--interactions file not found: {}",
            interactions_path.display()
        )));
    }
    if !items_path.exists() {
        return Err(MolarError::Config(format!(
            "--items file not found: {}",
            items_path.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new("prepare");
    manifest.hash_input(interactions_path)?;
    manifest.hash_input(items_path)?;

    let loaded = load_interactions(interactions_path)?;
    if loaded.report.empty_file {
        eprintln!("warning: interaction file is empty");
    }
    if loaded.report.malformed_rows > 0 {
        eprintln!(
            "warning: {} of {} rows malformed",
            loaded.report.malformed_rows, loaded.report.total_rows
        );
    }
    let items = {
        let head = std::fs::read(items_path)?;
        let head: String = head.iter().take(4096).map(|&b| b as char).collect();
        if crate::data::movielens::looks_like_ml100k_items(&head) {
            println!("items file detected as MovieLens u.item format");
            crate::data::movielens::read_ml100k_items(items_path)?
        } else {
            read_items_jsonl(items_path)?
        }
    };
    let dataset = build_dataset(&loaded.interactions, &items, min_interactions)?;
    let split = leave_one_out_split(&dataset, max_seq_len, min_interactions)?;

    // canonical dense files for downstream commands
    write_canonical_dataset(out, &dataset, &mut manifest)?;
    let split_path = out.join("split_manifest.json");
    split.save_manifest(&split_path)?;
    manifest.output(&split_path);

    println!(
        "prepared {} users ({} dropped), {} items, {} interactions",
        dataset.num_users(),
        split.dropped_users,
        dataset.num_items(),
        dataset.num_interactions
    );
    manifest.write(out)?;
    Ok(())
}

fn write_canonical_dataset(
    out: &Path,
    dataset: &Dataset,
    manifest: &mut ManifestBuilder,
) -> Result<()> {
    use std::io::Write;
    let inter_path = out.join("interactions.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&inter_path)?);
    writeln!(f, "user,item,timestamp")?;
    for seq in &dataset.sequences {
        for (t, item) in seq.items.iter().enumerate() {
            writeln!(f, "{},{},{}", seq.user_id, item, t)?;
        }
    }
    f.flush()?;
    manifest.output(&inter_path);

    let items_path = out.join("items.jsonl");
    write_items_jsonl(&items_path, &dataset.catalog)?;
    manifest.output(&items_path);

    for (name, map) in [
        ("user_map.csv", &dataset.user_map),
        ("item_map.csv", &dataset.item_map),
    ] {
        let path = out.join(name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "raw,dense")?;
        for (dense, raw) in map.dense_to_raw.iter().enumerate() {
            writeln!(f, "{raw},{dense}")?;
        }
        f.flush()?;
        manifest.output(&path);
    }
    Ok(())
}

/// Load a directory produced by `prepare`, rebuilding and verifying the
/// split against the stored manifest.
pub fn load_prepared(dir: &Path) -> Result<(Dataset, SplitDataset)> {
    let split_path = dir.join("split_manifest.json");
    if !split_path.exists() {
        return Err(MolarError::Config(format!(
            "--data directory {} has no split_manifest.json (run prepare first)",
            dir.display()
        )));
    }
    let stored = SplitDataset::load_manifest(&split_path)?;
    let loaded = load_interactions(&dir.join("interactions.csv"))?;
    let items = read_items_jsonl(&dir.join("items.jsonl"))?;
    let dataset = build_dataset(&loaded.interactions, &items, stored.min_interactions)?;
    let split = leave_one_out_split(&dataset, stored.max_seq_len, stored.min_interactions)?;
    let rebuilt = serde_json::to_string(&split)?;
    let reference = serde_json::to_string(&stored)?;
    if rebuilt != reference {
        return Err(MolarError::Data(format!(
            "{}: dataset files do not reproduce the stored split manifest; \
             the directory was modified after prepare",
            dir.display()
        )));
    }
    Ok((dataset, split))
}

// ── gen-corpus ──────────────────────────────────────────────────────

pub fn cmd_gen_corpus(task: &str, data: &Path, out: &Path) -> Result<()> {
    let tasks: Vec<&str> = match task.to_lowercase().as_str() {
        "it" => vec!["it"],
        "sa" => vec!["sa"],
        "ub" => vec!["ub"],
        "all" => vec!["it", "sa", "ub"],
        other => {
            return Err(MolarError::Config(format!(
                "unknown --task '{other}' (it|sa|ub|all)"
            )))
        }
    };
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new("gen-corpus");
    let (dataset, split) = load_prepared(data)?;
    for t in tasks {
        let corpus = match t {
            "it" => generate_it_corpus(&dataset.catalog),
            "sa" => generate_sa_corpus(&dataset.catalog),
            "ub" => generate_ub_corpus(&split, &dataset.catalog)?,
            _ => unreachable!(),
        };
        let path = out.join(format!("corpus_{t}.jsonl"));
        write_corpus_jsonl(&path, &corpus)?;
        manifest.output(&path);
        println!(
            "{}: {} records ({} skipped)",
            t.to_uppercase(),
            corpus.lines.len(),
            corpus.skipped
        );
    }
    manifest.write(out)?;
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub stage: String,
    pub ablate: Option<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub set: Vec<String>,
    pub resume: Option<PathBuf>,
    pub stop_after_steps: Option<u64>,
    pub stage1_ckpt: Option<PathBuf>,
}

fn apply_ablation(config: &mut TrainingConfig, ablate: &str) -> Result<()> {
    match ablate {
        "wo-cl" => config.alpha = 0.0,
        "wo-it" => config.stage1_enabled = false,
        "text-only" => {
            config.modality_text = true;
            config.modality_image = false;
        }
        "image-only" => {
            config.modality_text = false;
            config.modality_image = true;
        }
        other => {
            return Err(MolarError::Config(format!(
                "unknown --ablate '{other}' (wo-cl|wo-it|text-only|image-only)"
            )))
        }
    }
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainingConfig::from_file(path)?,
        None => TrainingConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            MolarError::Config(format!("--set expects KEY=VALUE, got '{kv}'"))
        })?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(ablate) = &args.ablate {
        apply_ablation(&mut config, ablate)?;
    }
    config.validate()?;

    let stage = args.stage.as_str();
    if !matches!(stage, "1" | "2" | "all") {
        return Err(MolarError::Config(format!(
            "unknown --stage '{stage}' (1|2|all)"
        )));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new("train");
    manifest.resolved_config = Some(config.to_text());
    manifest.ablate = args.ablate.clone();
    for name in ["interactions.csv", "items.jsonl", "split_manifest.json"] {
        let p = args.data.join(name);
        if p.exists() {
            manifest.hash_input(&p)?;
        }
    }

    let (dataset, split) = load_prepared(&args.data)?;
    if split.max_seq_len != config.max_seq_len {
        return Err(MolarError::Config(format!(
            "config max_seq_len={} does not match the prepared split's {}; \
             re-run prepare or adjust the config",
            config.max_seq_len, split.max_seq_len
        )));
    }

    let mut bundle = MolarBundle::new(&config, split.num_users(), split.num_items)?;

    // stage 1
    if matches!(stage, "1" | "all") {
        let log = run_stage1(&mut bundle, &dataset, &config)?;
        let curve = args.out.join("stage1_losses.csv");
        write_stage1_csv(&curve, &log)?;
        manifest.output(&curve);
        if let Some(loss) = log.final_loss() {
            println!(
                "stage 1: {} steps over {} items, final loss {loss:.4}",
                log.rows.len(),
                log.eligible_items
            );
        } else {
            println!("stage 1: disabled or skipped");
        }
        let ckpt_path = args.out.join("ckpt.stage1");
        let state = crate::trainer::Checkpoint {
            config_text: config.to_text(),
            num_users: split.num_users() as u32,
            num_items: split.num_items as u32,
            epoch: 0,
            step_in_epoch: 0,
            global_step: 0,
            neg_rng_word_pos: 0,
            encoder_params: bundle.encoder.parameters().iter().map(|p| p.value.clone()).collect(),
            dueg_params: bundle.dueg.parameters().iter().map(|p| p.value.clone()).collect(),
            id_params: bundle
                .id_model
                .as_ref()
                .map(|m| (m.kind(), m.parameters().iter().map(|p| p.value.clone()).collect())),
            adam_main: crate::trainer::AdamBlob {
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
            adam_id: None,
            best: None,
            val_curve: Vec::new(),
            losses: Vec::new(),
        };
        state.save(&ckpt_path)?;
        manifest.output(&ckpt_path);
        if stage == "1" {
            manifest.write(&args.out)?;
            return Ok(());
        }
    }

    // stage 2 (optionally from an explicit stage-1 checkpoint)
    if stage == "2" {
        if let Some(path) = &args.stage1_ckpt {
            let ckpt = Checkpoint::load(path)?;
            let (loaded, loaded_cfg) = bundle_from_checkpoint(&ckpt)?;
            if loaded_cfg.fingerprint() != config.fingerprint() {
                return Err(MolarError::Config(
                    "--stage1-ckpt was produced with a different configuration".into(),
                ));
            }
            bundle.encoder = loaded.encoder;
        }
    }

    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let resuming = resume.is_some();

    if !resuming {
        if let Some(log) = pretrain_partner(&mut bundle, &split, &config)? {
            println!(
                "id pretrain ({}): {} steps, validation N@10 {:.4}",
                config.post_alignment_model.name(),
                log.losses.len(),
                log.validation.ndcg(10)
            );
        }
    }

    let outcome = run_stage2(
        &mut bundle,
        &dataset,
        &split,
        &config,
        Stage2Options {
            resume,
            stop_after_steps: args.stop_after_steps,
        },
    )?;

    let losses_path = args.out.join("losses.csv");
    write_losses_csv(&losses_path, &outcome.losses)?;
    manifest.output(&losses_path);

    let val_path = args.out.join("val_curve.csv");
    {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&val_path)?);
        writeln!(f, "epoch,ndcg10")?;
        for (e, v) in &outcome.val_curve {
            writeln!(f, "{e},{v}")?;
        }
        f.flush()?;
    }
    manifest.output(&val_path);

    let ckpt_path = args.out.join("ckpt.molar");
    outcome.checkpoint.save(&ckpt_path)?;
    manifest.output(&ckpt_path);

    if outcome.finished {
        let report = outcome.test_report.as_ref().expect("finished run reports");
        let json_path = args.out.join("metrics.json");
        let csv_path = args.out.join("metrics.csv");
        report.write_json(&json_path)?;
        report.write_csv(&csv_path)?;
        manifest.output(&json_path);
        manifest.output(&csv_path);

        // interchange exports of the selected model
        let cache = EmbeddingCache::new();
        let refs: Vec<&crate::itemrep::record::ItemRecord> = dataset.catalog.iter().collect();
        let embs = crate::itemrep::cache::batch_encode(&refs, &bundle.encoder, &cache)?;
        let emb_path = args.out.join("items.emb");
        save_embeddings(&embs, &emb_path)?;
        manifest.output(&emb_path);
        let dueg_path = args.out.join("ckpt.dueg");
        bundle.dueg.save(&dueg_path)?;
        manifest.output(&dueg_path);
        if let Some(id_model) = &bundle.id_model {
            let id_path = args.out.join("ckpt.id");
            id_model.save(&id_path)?;
            manifest.output(&id_path);
        }

        for v in &report.values {
            println!("test {}@{} = {:.6}", v.metric, v.k, v.value);
        }
        if let (Some(e), Some(v)) = (outcome.best_epoch, outcome.best_val_ndcg) {
            println!("selected epoch {e} (validation N@10 {v:.6})");
        }
    } else {
        println!(
            "stopped after {} steps; resume with --resume {}",
            outcome.checkpoint.global_step,
            ckpt_path.display()
        );
    }
    manifest.write(&args.out)?;
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────

pub fn cmd_eval(ckpt: &Path, data: &Path, k: &str, out: &Path) -> Result<()> {
    let ks = parse_k_list(k)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new("eval");
    manifest.hash_input(ckpt)?;

    let checkpoint = Checkpoint::load(ckpt)?;
    let (bundle, config) = bundle_from_checkpoint(&checkpoint)?;
    manifest.resolved_config = Some(config.to_text());
    let (dataset, split) = load_prepared(data)?;
    if split.num_items != checkpoint.num_items as usize {
        return Err(MolarError::Config(format!(
            "checkpoint was trained on {} items, data directory has {}",
            checkpoint.num_items, split.num_items
        )));
    }

    let cache = EmbeddingCache::new();
    let scorer = ContentScorer::build(&bundle.encoder, &bundle.dueg, &dataset.catalog, &cache)?;
    let report = evaluate(
        &scorer,
        &split,
        &ks,
        EvalSplit::Test,
        &format!("{:016x}", config.fingerprint()),
    )?;
    let json_path = out.join("metrics.json");
    let csv_path = out.join("metrics.csv");
    report.write_json(&json_path)?;
    report.write_csv(&csv_path)?;
    manifest.output(&json_path);
    manifest.output(&csv_path);
    for v in &report.values {
        println!("test {}@{} = {:.6}", v.metric, v.k, v.value);
    }
    manifest.write(out)?;
    Ok(())
}

fn parse_k_list(k: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = k
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| MolarError::Config(format!("invalid --k list '{k}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(MolarError::Config(format!("invalid --k list '{k}'")));
    }
    Ok(ks)
}

// ── gradcheck ───────────────────────────────────────────────────────

pub fn cmd_gradcheck(component: &str) -> Result<()> {
    let components = gradcheck::Component::parse(component)?;
    let mut all_passed = true;
    for c in components {
        for report in gradcheck::run_component(c)? {
            let ok = report.passed();
            all_passed &= ok;
            println!(
                "{} {:<12} max_rel_err={:.3e} (tolerance {:.0e})",
                if ok { "PASS" } else { "FAIL" },
                c.name(),
                report.worst(),
                report.tolerance
            );
            if !ok {
                println!("{}", report.summary());
            }
        }
    }
    if all_passed {
        Ok(())
    } else {
        Err(MolarError::Training(
            "gradient check failed (see report above)".into(),
        ))
    }
}

// ── synth ───────────────────────────────────────────────────────────

pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| {
        MolarError::Config(format!("cannot read spec {}: {e}", spec_path.display()))
    })?;
    let spec = SyntheticSpec::from_text(&text)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new("synth");
    manifest.hash_input(spec_path)?;
    let dataset = generate_synthetic_dataset(&spec)?;
    write_synthetic_files(&dataset, out)?;
    manifest.output(&out.join("interactions.csv"));
    manifest.output(&out.join("items.jsonl"));
    println!(
        "generated {} users x {} interactions over {} items",
        spec.num_users, spec.sequence_length, spec.num_items
    );
    manifest.write(out)?;
    Ok(())
}
