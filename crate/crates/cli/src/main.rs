//! Command-line front end for the incremental few-shot pipeline.
//!
//! One JSON file configures everything; missing sections fall back to
//! defaults and `--set path.to.field=value` patches individual entries.
//! Every subcommand takes an explicit `--seed`, and identical invocations
//! produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fscil_core::adapter::{AdapterConfig, AdapterParams};
use fscil_core::datasets::{load_cifar100_binary, synth_blob_dataset, Dataset};
use fscil_core::encoder::{
    pretrain, AugmentConfig, EncoderConfig, EncoderKind, EncoderParams, PretrainConfig,
};
use fscil_core::harness::{
    ablation_csv, evaluate, run_ablation, run_incremental, write_loss_log, write_run_artifacts,
    AblationAxis, AblationPlan, RunArtifacts, RunConfig,
};
use fscil_core::heads::{ClassifierWeights, HeadKind};
use fscil_core::pil::{run_pil, PilConfig};
use fscil_core::seeding::{mix, salt};

#[derive(Parser)]
#[command(
    name = "fscil",
    version,
    about = "Few-shot class-incremental learning with an attention-adapted classifier bank"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the encoder and a linear classifier on the base classes.
    Pretrain(PretrainArgs),
    /// Train the bank adapter on rehearsal episodes built from base data.
    Pil(PilArgs),
    /// Run the incremental protocol and write metrics.
    Run(RunArgs),
    /// Run an ablation grid over one factor and write a CSV table.
    Ablate(AblateArgs),
    /// Score a saved classifier on the test pool of its classes.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration; missing sections use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Patch one configuration value, e.g. --set pil.iterations=500
    /// (repeatable). Values parse as JSON, falling back to strings.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Output directory for encoder.json, head.json, pretrain_log.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PilArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Encoder checkpoint from `pretrain`.
    #[arg(long)]
    encoder: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    /// Adapter checkpoint from `pil`; required unless run.use_adapter=false.
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Pretrained base classifier, reused when kind and classes match.
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    /// Which factor the grid varies.
    #[arg(long, value_enum)]
    axis: AxisArg,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Evaluation worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum AxisArg {
    WayShot,
    Rotation,
    Head,
    Switches,
}

/// Where the images come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum DatasetSource {
    /// Procedurally generated oriented-blob images.
    SynthBlobs {
        classes: usize,
        per_class_train: usize,
        per_class_test: usize,
        side: usize,
        seed: u64,
    },
    /// CIFAR-100 binary files (3074-byte records).
    Cifar100Binary { train: PathBuf, test: PathBuf },
}

/// Ablation grids, configured rather than hardcoded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AblateSection {
    way_shot: Vec<(usize, usize)>,
    rotation_degrees: Vec<f64>,
    head_kinds: Vec<HeadKind>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            way_shot: vec![(5, 1), (5, 5)],
            rotation_degrees: vec![30.0, 60.0, 90.0, 180.0],
            head_kinds: vec![HeadKind::Cosine, HeadKind::Linear, HeadKind::NegL2],
        }
    }
}

/// The whole pipeline's configuration, one section per stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileConfig {
    dataset: DatasetSource,
    encoder: EncoderConfig,
    pretrain: PretrainConfig,
    adapter: AdapterConfig,
    pil: PilConfig,
    run: RunConfig,
    ablate: AblateSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        // These defaults reproduce the benchmark regime the end-to-end
        // acceptance tests certify: a deliberately small encoder on noisy
        // blob classes, where few-shot prototypes are imperfect enough that
        // bank adaptation has something to repair. With a near-ceiling
        // encoder (say, pretrain.epochs=30 and embed_dim=32) class means are
        // already close to optimal and the adapter has no headroom.
        Self {
            dataset: DatasetSource::SynthBlobs {
                classes: 20,
                per_class_train: 25,
                per_class_test: 10,
                side: 16,
                seed: 1,
            },
            encoder: EncoderConfig {
                kind: EncoderKind::TinyCnn,
                channels: 1,
                height: 16,
                width: 16,
                hidden: vec![64],
                conv_channels: (4, 8),
                embed_dim: 8,
            },
            // Augmentation stays off for the blob classes: they are defined
            // by orientation, so mirror flips move images across class
            // boundaries. Re-enable it for photographic data.
            pretrain: PretrainConfig {
                epochs: 12,
                decay_every: 2,
                augment: AugmentConfig::none(),
                ..PretrainConfig::default()
            },
            // Per-query joint adaptation with a little dropout is what pays
            // off at this scale; the plain bank-only form is kept as the
            // library default for its sharper algebraic invariants.
            adapter: AdapterConfig {
                dropout: 0.10,
                include_query_node: true,
                ..AdapterConfig::default()
            },
            pil: PilConfig {
                way: 5,
                shot: 5,
                query: 5,
                iterations: 300,
                learning_rate: 1e-3,
                decay_every: 150,
                last_layer_lr: 0.0,
                augment: AugmentConfig::none(),
                ..PilConfig::default()
            },
            run: RunConfig {
                base_classes: 12,
                way: 2,
                shot: 5,
                incremental_sessions: 4,
                ..RunConfig::default()
            },
            ablate: AblateSection::default(),
        }
    }
}

/// Overlay `patch` onto `base`: objects merge key by key, everything else
/// replaces.
fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (key, value) in p {
                merge_json(b.entry(key.clone()).or_insert(serde_json::Value::Null), value);
            }
        }
        (slot, _) => *slot = patch.clone(),
    }
}

fn apply_set(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("--set needs PATH=VALUE, got {spec:?}"))?;
    if path.is_empty() {
        bail!("--set path is empty in {spec:?}");
    }
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !cursor.get(*part).map_or(false, |v| v.is_object()) {
            cursor[*part] = serde_json::json!({});
        }
        cursor = cursor.get_mut(*part).expect("just inserted");
    }
    cursor[parts[parts.len() - 1]] = value;
    Ok(())
}

/// Resolve the effective configuration: defaults, then the file, then
/// `--set` patches. Returns the typed config and its JSON echo.
fn load_config(args: &ConfigArgs) -> Result<(FileConfig, serde_json::Value)> {
    let mut doc = serde_json::to_value(FileConfig::default())?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let patch: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if !patch.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        merge_json(&mut doc, &patch);
    }
    for spec in &args.set {
        apply_set(&mut doc, spec)?;
    }
    let config: FileConfig = serde_json::from_value(doc.clone())
        .context("configuration does not match the expected schema")?;
    Ok((config, doc))
}

fn build_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::SynthBlobs {
            classes,
            per_class_train,
            per_class_test,
            side,
            seed,
        } => Ok(synth_blob_dataset(
            *classes,
            *per_class_train,
            *per_class_test,
            *side,
            *seed,
        )?),
        DatasetSource::Cifar100Binary { train, test } => Ok(load_cifar100_binary(train, test)?),
    }
}

fn config_digest(doc: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(doc).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn base_class_list(run: &RunConfig) -> Vec<usize> {
    (0..run.base_classes).collect()
}

fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let (mut config, _doc) = load_config(&args.config)?;
    config.pretrain.seed = args.seed;
    let dataset = build_dataset(&config.dataset)?;
    let encoder = EncoderParams::init(config.encoder.clone(), args.seed)?;
    let base = base_class_list(&config.run);
    let outcome = pretrain(&encoder, &dataset, &base, &config.pretrain)?;

    fs::create_dir_all(&args.out)?;
    outcome.encoder.save(&args.out.join("encoder.json"))?;
    outcome.head.save(&args.out.join("head.json"))?;
    let mut log = String::from("epoch,loss\n");
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{epoch},{loss}\n"));
    }
    fs::write(args.out.join("pretrain_log.csv"), log)?;
    println!(
        "pretrained on {} classes: train accuracy {:.2}%",
        base.len(),
        outcome.train_accuracy * 100.0
    );
    println!("wrote {}", args.out.join("encoder.json").display());
    Ok(())
}

fn cmd_pil(args: &PilArgs) -> Result<()> {
    let (mut config, _doc) = load_config(&args.config)?;
    config.pil.seed = args.seed;
    let dataset = build_dataset(&config.dataset)?;
    let encoder = EncoderParams::load(&args.encoder)?;
    let adapter = AdapterParams::init(
        config.adapter.clone(),
        encoder.config().embed_dim,
        mix(args.seed, &[salt("adapter-init")]),
    )?;
    let base = base_class_list(&config.run);
    let outcome = run_pil(&adapter, &encoder, &dataset, &base, &config.pil)?;

    fs::create_dir_all(&args.out)?;
    outcome.adapter.save(&args.out.join("adapter.json"))?;
    outcome.encoder.save(&args.out.join("encoder.json"))?;
    write_loss_log(&args.out, &outcome.loss_log)?;
    if let (Some(first), Some(last)) = (outcome.loss_log.first(), outcome.loss_log.last()) {
        println!(
            "episodic training: {} iterations, loss {:.4} -> {:.4}",
            outcome.loss_log.len(),
            first.loss,
            last.loss
        );
    }
    println!("wrote {}", args.out.join("adapter.json").display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (mut config, mut doc) = load_config(&args.config)?;
    config.run.seed = args.seed;
    // The artifact config echo records the experiment's identity. Thread
    // count only schedules work — results are value-identical for any
    // count — so it stays out of the echo and its digest.
    if let Some(run) = doc.get_mut("run").and_then(|v| v.as_object_mut()) {
        run.remove("eval_threads");
    }
    let dataset = build_dataset(&config.dataset)?;
    let encoder = EncoderParams::load(&args.encoder)?;
    let adapter = args
        .adapter
        .as_ref()
        .map(|p| AdapterParams::load(p))
        .transpose()?;
    let head = args
        .head
        .as_ref()
        .map(|p| ClassifierWeights::load(p))
        .transpose()?;

    let outcome = run_incremental(
        &encoder,
        adapter.as_ref(),
        head.as_ref(),
        &dataset,
        &config.run,
    )?;

    let mut digests = BTreeMap::new();
    digests.insert("config".to_string(), config_digest(&doc));
    digests.insert("encoder".to_string(), outcome.encoder_digest_after.clone());
    if let Some(d) = &outcome.adapter_digest_after {
        digests.insert("adapter".to_string(), d.clone());
    }
    let seeds = BTreeMap::from([("run".to_string(), args.seed)]);
    write_run_artifacts(
        &args.out,
        &RunArtifacts {
            metrics: &outcome.metrics,
            split: &outcome.split,
            config: doc,
            seeds,
            digests,
        },
    )?;
    outcome.final_head.save(&args.out.join("head.json"))?;

    for (s, acc) in outcome.metrics.accuracies.iter().enumerate() {
        println!(
            "session {s}: {} classes, accuracy {:.2}%",
            outcome.split.classes_up_to(s).len(),
            acc * 100.0
        );
    }
    println!(
        "average {:.2}%  performance drop {:.2}",
        outcome.metrics.average_percent, outcome.metrics.pd
    );
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let (mut config, _doc) = load_config(&args.config)?;
    config.run.seed = args.seed;
    let dataset = build_dataset(&config.dataset)?;
    let encoder = EncoderParams::load(&args.encoder)?;
    let axis = match args.axis {
        AxisArg::WayShot => AblationAxis::WayShot(config.ablate.way_shot.clone()),
        AxisArg::Rotation => AblationAxis::RotationDegrees(config.ablate.rotation_degrees.clone()),
        AxisArg::Head => AblationAxis::ClassifierKind(config.ablate.head_kinds.clone()),
        AxisArg::Switches => AblationAxis::Switches,
    };
    let plan = AblationPlan {
        axis,
        adapter: config.adapter.clone(),
        pil: config.pil.clone(),
        run: config.run.clone(),
        seed: args.seed,
    };
    let cells = run_ablation(&encoder, &dataset, &plan)?;
    let csv = ablation_csv(&cells);
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (config, _doc) = load_config(&args.config)?;
    let dataset = build_dataset(&config.dataset)?;
    let encoder = EncoderParams::load(&args.encoder)?;
    let head = ClassifierWeights::load(&args.head)?;
    let adapter = args
        .adapter
        .as_ref()
        .map(|p| AdapterParams::load(p))
        .transpose()?;
    let bank = fscil_core::adapter::ClassifierBank::from_heads(&[&head])?;
    let classes = head.class_ids().to_vec();
    let threads = args.threads.unwrap_or(config.run.eval_threads);
    let confusion = evaluate(&encoder, &bank, adapter.as_ref(), &dataset, &classes, threads)?;
    println!(
        "{} classes, {} test images, accuracy {:.2}%",
        classes.len(),
        confusion.total(),
        confusion.accuracy() * 100.0
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Pretrain(args) => cmd_pretrain(&args),
        Command::Pil(args) => cmd_pil(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_patches_reach_nested_fields() {
        let mut doc = serde_json::to_value(FileConfig::default()).unwrap();
        apply_set(&mut doc, "pil.iterations=42").unwrap();
        apply_set(&mut doc, "run.head_kind=\"linear\"").unwrap();
        apply_set(&mut doc, "dataset.classes=12").unwrap();
        let config: FileConfig = serde_json::from_value(doc).unwrap();
        assert_eq!(config.pil.iterations, 42);
        assert_eq!(config.run.head_kind, HeadKind::Linear);
        match config.dataset {
            DatasetSource::SynthBlobs { classes, .. } => assert_eq!(classes, 12),
            _ => panic!("dataset kind changed unexpectedly"),
        }
    }

    #[test]
    fn merge_overlays_objects_and_replaces_leaves() {
        let mut base = serde_json::json!({"a": {"x": 1, "y": 2}, "b": 3});
        merge_json(&mut base, &serde_json::json!({"a": {"y": 9}, "c": [1, 2]}));
        assert_eq!(base, serde_json::json!({"a": {"x": 1, "y": 9}, "b": 3, "c": [1, 2]}));
    }

    #[test]
    fn malformed_set_specs_are_rejected() {
        let mut doc = serde_json::json!({});
        assert!(apply_set(&mut doc, "no-equals").is_err());
        assert!(apply_set(&mut doc, "=5").is_err());
    }

    #[test]
    fn default_config_is_schema_valid() {
        let doc = serde_json::to_value(FileConfig::default()).unwrap();
        let config: FileConfig = serde_json::from_value(doc.clone()).unwrap();
        let DatasetSource::SynthBlobs { classes, .. } = config.dataset else {
            panic!("default dataset should be the synthetic one");
        };
        // The default protocol must exactly cover the default dataset.
        assert_eq!(
            config.run.base_classes + config.run.way * config.run.incremental_sessions,
            classes
        );
        config.run.check().unwrap();
        assert_eq!(config_digest(&doc).len(), 64);
    }
}
