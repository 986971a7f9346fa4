//! The `eqlf` command-line tool: synthetic data generation, training,
//! evaluation and the experiment drivers.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};
use eqlift::checkpoint::{CheckpointError, TrainingState};
use eqlift::data::{
    generate_synthetic, read_dataset, split_fingerprint, split_protocol, subsample_10fps, write_dataset, DataError,
    FrameRecord, Protocol,
};
use eqlift::eval::{
    aug_distance_sweep, embedding_rotation_experiment, evaluate_records, line_plot_svg, median, run_protocol,
    EvalError, EvalReport, Series, SweepRow, SweepVariant,
};
use eqlift::io::write_atomic_bytes;
use eqlift::trainer::{
    self, ablation_suite, prepare_experiment, spec_hash, train_and_score, AblationRow, AblationVariant, EpochRow,
    TrainData, TrainError, TrainHooks, TrainOutcome,
};
use serde::Serialize;
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("interrupted")]
    Interrupted,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
            CliError::Interrupted => EXIT_INTERRUPTED,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Io(e.to_string()),
            DataError::ConfigInvalid(m) | DataError::UnknownCamera(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => CliError::Io(e.to_string()),
            CheckpointError::SchemaMismatch(m) => CliError::Config(format!("checkpoint does not match config: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Data(d) => d.into(),
            EvalError::Geometry(g) => CliError::Numeric(g.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::Compute(_) => CliError::Numeric(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::ConfigInvalid(m) => CliError::Config(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eqlf", version, about = "Siamese 2D-to-3D pose lifting with an equivariant embedding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    pub sets: Vec<String>,
    /// Training seed (overrides train.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Acknowledge that sweep-aug and ablate train many models.
    #[arg(long, global = true)]
    pub confirm_long: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset as JSONL.
    GenerateSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoints, the loss log and curves.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under the configured protocols.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to final.eqlf in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rotate embeddings about the vertical axis and decode.
    EmbedRotate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Held-out-camera error against the distance of the nearest training view.
    SweepAug {
        #[command(flatten)]
        common: Common,
    },
    /// Train every ablation variant and tabulate the errors.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenerateSynth { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::EmbedRotate { common, .. }
            | Command::SweepAug { common }
            | Command::Ablate { common } => common,
        }
    }
}

/// Resolved configuration plus where outputs go.
pub struct Context<'a> {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub cancel: &'a AtomicBool,
}

impl Context<'_> {
    fn seed(&self) -> u64 {
        self.cfg.train.seed
    }

    fn provenance(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.seed())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        write_atomic_bytes(&path, bytes)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn checkpoint_path(&self, given: Option<&Path>) -> PathBuf {
        given
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out.join(trainer::FINAL_CHECKPOINT))
    }
}

pub fn resolve<'a>(common: &Common, cancel: &'a AtomicBool) -> Result<Context<'a>, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.sets)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(Context {
        hash: cfg.hash(),
        out: cfg.output.dir.clone(),
        cfg,
        cancel,
    })
}

/// Builds the rayon pool from `EQLF_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("EQLF_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("EQLF_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn run(cli: Cli, cancel: &AtomicBool) -> Result<(), CliError> {
    let ctx = resolve(cli.command.common(), cancel)?;
    for w in ctx.cfg.augmentation.warnings() {
        eprintln!("warning: {w}");
    }
    match &cli.command {
        Command::GenerateSynth { .. } => cmd_generate_synth(&ctx),
        Command::Train { resume, .. } => cmd_train(&ctx, resume.as_deref()),
        Command::Eval { checkpoint, .. } => cmd_eval(&ctx, checkpoint.as_deref()),
        Command::EmbedRotate { checkpoint, .. } => cmd_embed_rotate(&ctx, checkpoint.as_deref()),
        Command::SweepAug { common } => {
            require_long(common)?;
            cmd_sweep_aug(&ctx)
        }
        Command::Ablate { common } => {
            require_long(common)?;
            cmd_ablate(&ctx)
        }
    }
}

fn require_long(common: &Common) -> Result<(), CliError> {
    if common.confirm_long {
        Ok(())
    } else {
        Err(CliError::Config(
            "this command trains many models; pass --confirm-long to run it".into(),
        ))
    }
}

/// The configured dataset file, or the synthetic set.
pub fn load_records(cfg: &RunConfig) -> Result<Vec<FrameRecord>, CliError> {
    match &cfg.data.dataset {
        Some(path) => {
            let records = read_dataset(path)?;
            match cfg.data.source_fps {
                Some(fps) => Ok(subsample_10fps(records, fps)?),
                None => Ok(records),
            }
        }
        None => Ok(generate_synthetic(&cfg.synth)?),
    }
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    config_hash: &'a str,
    seed: u64,
    records: usize,
}

pub fn cmd_generate_synth(ctx: &Context) -> Result<(), CliError> {
    let records = generate_synthetic(&ctx.cfg.synth)?;
    std::fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("dataset.jsonl");
    write_dataset(&records, &path)?;
    ctx.write_json(
        "dataset.meta.json",
        &DatasetMeta {
            config_hash: &ctx.hash,
            seed: ctx.cfg.synth.seed,
            records: records.len(),
        },
    )?;
    println!("wrote {} records to {} (config {})", records.len(), path.display(), ctx.hash);
    Ok(())
}

fn log_csv(outcome: &TrainOutcome, ctx: &Context) -> String {
    outcome.log.to_csv(&ctx.hash, ctx.seed())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a RunConfig,
    epochs_completed: usize,
    best_epoch: Option<usize>,
    best_test_mpjpe: f64,
    final_test_mpjpe: Option<f64>,
    cancelled: bool,
}

pub fn cmd_train(ctx: &Context, resume: Option<&Path>) -> Result<(), CliError> {
    let records = load_records(&ctx.cfg)?;
    let spec = ctx.cfg.experiment();
    let data = prepare_experiment(&records, &spec)?;
    let train_set = if spec.augmentation.enabled {
        &data.train_augmented
    } else {
        &data.train
    };
    println!(
        "training on {} records ({} original), testing on {} (config {})",
        train_set.len(),
        data.train.len(),
        data.test.len(),
        ctx.hash
    );
    let mut progress = |r: &EpochRow| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  l2 {:.4}/{:.4}  siamese {:.4}  test {:.2} mm",
            r.epoch, r.lr, r.total, r.l2_a, r.l2_b, r.siamese, r.test_mpjpe
        )
    };
    let hooks = TrainHooks {
        cancel: Some(ctx.cancel),
        on_epoch: Some(&mut progress),
        checkpoint_dir: Some(ctx.out.clone()),
        config_hash: ctx.hash.clone(),
        ..TrainHooks::default()
    };
    let train_data = TrainData {
        train: train_set,
        test: &data.test,
        stats: &data.stats,
    };
    let outcome = match resume {
        Some(path) => {
            let state = load_state(path, ctx)?;
            trainer::resume(state, &spec.train, train_data, hooks)?
        }
        None => trainer::train(&spec.model, &spec.train, train_data, hooks)?,
    };
    ctx.write("train_log.csv", log_csv(&outcome, ctx).as_bytes())?;
    let epochs: Vec<f64> = outcome.log.rows.iter().map(|r| r.epoch as f64).collect();
    let loss = Series {
        name: "train loss".into(),
        points: epochs.iter().zip(&outcome.log.rows).map(|(e, r)| (*e, r.total)).collect(),
    };
    let test = Series {
        name: "test MPJPE (mm)".into(),
        points: epochs.iter().zip(&outcome.log.rows).map(|(e, r)| (*e, r.test_mpjpe)).collect(),
    };
    ctx.write(
        "train_loss.svg",
        line_plot_svg("Training loss", "epoch", "loss", &[loss], &ctx.provenance()).as_bytes(),
    )?;
    ctx.write(
        "test_mpjpe.svg",
        line_plot_svg("Test error", "epoch", "MPJPE (mm)", &[test], &ctx.provenance()).as_bytes(),
    )?;
    ctx.write_json(
        "train_summary.json",
        &TrainSummary {
            config_hash: &ctx.hash,
            seed: ctx.seed(),
            config: &ctx.cfg,
            epochs_completed: outcome.state.epoch,
            best_epoch: outcome.best_epoch,
            best_test_mpjpe: outcome.state.best_test_mpjpe,
            final_test_mpjpe: outcome.log.rows.last().map(|r| r.test_mpjpe),
            cancelled: outcome.cancelled,
        },
    )?;
    if outcome.cancelled {
        println!("interrupted; final checkpoint written to {}", ctx.out.display());
        return Err(CliError::Interrupted);
    }
    println!("checkpoints and logs written to {}", ctx.out.display());
    Ok(())
}

fn load_state(path: &Path, ctx: &Context) -> Result<TrainingState, CliError> {
    TrainingState::load(path, Some(&ctx.cfg.model)).map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_model(ctx: &Context, checkpoint: Option<&Path>) -> Result<TrainingState, CliError> {
    load_state(&ctx.checkpoint_path(checkpoint), ctx)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config_hash: &'a str,
    seed: u64,
    checkpoint: String,
    weights: &'static str,
    reports: Vec<EvalEntry>,
}

#[derive(Serialize)]
struct EvalEntry {
    /// Whether the model's statistics were fitted on this protocol's
    /// training side (checked) or on another split.
    stats_checked: bool,
    report: EvalReport,
}

pub fn cmd_eval(ctx: &Context, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let state = load_model(ctx, checkpoint)?;
    let model = &state.model;
    let stats = model
        .stats
        .as_ref()
        .ok_or_else(|| CliError::Data("checkpoint has no normalization statistics".into()))?;
    let records = load_records(&ctx.cfg)?;
    let subjects = ctx.cfg.subjects();
    let test_camera = &ctx.cfg.data.test_camera;
    let mut entries = Vec::new();
    let mut table = format!("# {}\n", ctx.provenance());
    for &p in &ctx.cfg.eval.protocols {
        let (train, mut test) = split_protocol(&records, p, &subjects, test_camera)?;
        let checked = split_fingerprint(&train) == stats.fingerprint;
        let mut report = if checked {
            run_protocol(model, &records, p, &subjects, test_camera, ctx.cfg.eval.procrustes_scale)?
        } else {
            if ctx.cfg.eval.exclude_test_camera && p != Protocol::Three {
                test.retain(|r| &r.camera.id != test_camera);
            }
            evaluate_records(model, &test, p, ctx.cfg.eval.procrustes_scale)?
        };
        report.seed = state.seed;
        report.config_hash = ctx.hash.clone();
        table.push_str(&report.to_table());
        entries.push(EvalEntry {
            stats_checked: checked,
            report,
        });
    }
    print!("{table}");
    let path = ctx.checkpoint_path(checkpoint);
    ctx.write_json(
        "eval_report.json",
        &EvalOutput {
            config_hash: &ctx.hash,
            seed: state.seed,
            checkpoint: path.display().to_string(),
            weights: weights_name(&path),
            reports: entries,
        },
    )?;
    ctx.write("eval_table.txt", table.as_bytes())?;
    Ok(())
}

fn weights_name(path: &Path) -> &'static str {
    match path.file_name().and_then(|n| n.to_str()) {
        Some(trainer::BEST_CHECKPOINT) => "best",
        Some(trainer::FINAL_CHECKPOINT) => "final",
        _ => "other",
    }
}

pub fn cmd_embed_rotate(ctx: &Context, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let state = load_model(ctx, checkpoint)?;
    let records = load_records(&ctx.cfg)?;
    let (_, test) = split_protocol(
        &records,
        ctx.cfg.train.protocol,
        &ctx.cfg.subjects(),
        &ctx.cfg.data.test_camera,
    )?;
    let rows = embedding_rotation_experiment(&state.model, &test, &ctx.cfg.eval.rotation_angles_deg)?;
    let mut csv = format!("# {}\nangle_deg,mean_mpjpe,median_mpjpe\n", ctx.provenance());
    for r in &rows {
        csv.push_str(&format!("{},{:e},{:e}\n", r.angle_deg, r.mean_mpjpe, r.median_mpjpe));
        println!("{:>7.1}°  mean {:.2} mm  median {:.2} mm", r.angle_deg, r.mean_mpjpe, r.median_mpjpe);
    }
    ctx.write("embed_rotate.csv", csv.as_bytes())?;
    let series = [
        Series {
            name: "mean".into(),
            points: rows.iter().map(|r| (r.angle_deg, r.mean_mpjpe)).collect(),
        },
        Series {
            name: "median".into(),
            points: rows.iter().map(|r| (r.angle_deg, r.median_mpjpe)).collect(),
        },
    ];
    ctx.write(
        "embed_rotate.svg",
        line_plot_svg("Rotated embedding", "rotation (deg)", "MPJPE (mm)", &series, &ctx.provenance()).as_bytes(),
    )?;
    Ok(())
}

fn sweep_variant(v: SweepVariant) -> AblationVariant {
    match v {
        SweepVariant::Siamese => AblationVariant::AllOn,
        SweepVariant::Baseline => AblationVariant::Baseline,
    }
}

pub fn cmd_sweep_aug(ctx: &Context) -> Result<(), CliError> {
    if ctx.cfg.train.protocol != Protocol::Three {
        return Err(CliError::Config("sweep-aug needs train.protocol = 3 (a held-out camera)".into()));
    }
    let records = load_records(&ctx.cfg)?;
    let spec = ctx.cfg.experiment();
    let data = prepare_experiment(&records, &spec)?;
    let test_cam = data
        .test_camera
        .clone()
        .ok_or_else(|| CliError::Config(format!("camera {} has no test records", spec.test_camera)))?;
    let train_fn = |set: &[FrameRecord], test: &[FrameRecord], v: SweepVariant, seed: u64| {
        if ctx.cancel.load(std::sync::atomic::Ordering::SeqCst) {
            return Err(EvalError::Other("interrupted".into()));
        }
        let mut s = sweep_variant(v).apply(&spec);
        s.train.seed = seed;
        let (_, mpjpe) = train_and_score(&s.model, &s.train, set, test, &data.stats, &spec_hash(&s))
            .map_err(|e| EvalError::Other(e.to_string()))?;
        println!("{:<8} seed {seed}: {} training records, {mpjpe:.2} mm", v.name(), set.len());
        Ok(mpjpe)
    };
    let variants = [SweepVariant::Siamese, SweepVariant::Baseline];
    let rows = aug_distance_sweep(
        train_fn,
        &data.train,
        &data.test,
        &test_cam,
        &ctx.cfg.eval.sweep_distances_deg,
        &variants,
        &ctx.cfg.eval.sweep_seeds,
        &spec.augmentation,
    )
    .map_err(|e| match e {
        EvalError::Other(m) if m == "interrupted" => CliError::Interrupted,
        other => other.into(),
    })?;
    write_sweep(ctx, &rows, &variants)
}

fn write_sweep(ctx: &Context, rows: &[SweepRow], variants: &[SweepVariant]) -> Result<(), CliError> {
    let seeds = format!("{:?}", ctx.cfg.eval.sweep_seeds);
    let mut csv = format!("# config_hash={} seeds={seeds}\ndistance_deg,variant,seed,mpjpe\n", ctx.hash);
    for r in rows {
        csv.push_str(&format!("{},{},{},{:e}\n", r.distance_deg, r.variant.name(), r.seed, r.mpjpe));
    }
    ctx.write("sweep_aug.csv", csv.as_bytes())?;
    let series: Vec<Series> = variants
        .iter()
        .map(|&v| Series {
            name: format!("{} (median)", v.name()),
            points: ctx
                .cfg
                .eval
                .sweep_distances_deg
                .iter()
                .map(|&d| {
                    let e: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.variant == v && r.distance_deg == d)
                        .map(|r| r.mpjpe)
                        .collect();
                    (d, median(&e))
                })
                .collect(),
        })
        .collect();
    ctx.write(
        "sweep_aug.svg",
        line_plot_svg(
            "Held-out camera error vs. distance to nearest training view",
            "distance (deg)",
            "MPJPE (mm)",
            &series,
            &format!("config_hash={} seeds={seeds}", ctx.hash),
        )
        .as_bytes(),
    )?;
    println!("wrote {} sweep rows to {}", rows.len(), ctx.out.display());
    Ok(())
}

/// Published reference errors (mm) for each ablation arm on the full
/// benchmark, shown beside the desk-scale numbers.
pub fn reference_mm(v: AblationVariant) -> f64 {
    match v {
        AblationVariant::AllOn => 65.8,
        AblationVariant::NoSiamese => 71.1,
        AblationVariant::NoAugmentation => 81.0,
        AblationVariant::NoLeakyRelu => 67.1,
        AblationVariant::Baseline => 86.5,
    }
}

#[derive(Serialize)]
struct AblationOutput<'a> {
    config_hash: &'a str,
    seeds: &'a [u64],
    rows: &'a [AblationRow],
    summary: Vec<AblationSummary>,
}

#[derive(Serialize)]
struct AblationSummary {
    variant: AblationVariant,
    median_mpjpe: f64,
    reference_mm: f64,
    seeds: Vec<u64>,
    config_hashes: Vec<String>,
}

pub fn cmd_ablate(ctx: &Context) -> Result<(), CliError> {
    let records = load_records(&ctx.cfg)?;
    let spec = ctx.cfg.experiment();
    let data = prepare_experiment(&records, &spec)?;
    let variants = &ctx.cfg.eval.ablation_variants;
    let seeds = &ctx.cfg.eval.ablation_seeds;
    let mut interrupted = false;
    let mut rows = Vec::new();
    for &v in variants {
        for &s in seeds {
            if ctx.cancel.load(std::sync::atomic::Ordering::SeqCst) {
                interrupted = true;
                break;
            }
            rows.extend(ablation_suite(&data, &spec, &[v], &[s], |r, _| {
                println!("{:<16} seed {}: {:.2} mm", r.variant.name(), r.seed, r.mpjpe)
            })?);
        }
    }
    let summary: Vec<AblationSummary> = variants
        .iter()
        .map(|&v| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            AblationSummary {
                variant: v,
                median_mpjpe: median(&mine.iter().map(|r| r.mpjpe).collect::<Vec<_>>()),
                reference_mm: reference_mm(v),
                seeds: mine.iter().map(|r| r.seed).collect(),
                config_hashes: mine.iter().map(|r| r.config_hash.clone()).collect(),
            }
        })
        .collect();
    let mut csv = format!("# config_hash={} seeds={seeds:?}\nvariant,seed,mpjpe,config_hash\n", ctx.hash);
    for r in &rows {
        csv.push_str(&format!("{},{},{:e},{}\n", r.variant.name(), r.seed, r.mpjpe, r.config_hash));
    }
    ctx.write("ablation.csv", csv.as_bytes())?;
    let mut table = format!("# config_hash={} seeds={seeds:?}\n", ctx.hash);
    table.push_str(&format!("{:<16}  {:>10}  {:>13}\n", "variant", "median mm", "reference mm"));
    for s in &summary {
        table.push_str(&format!(
            "{:<16}  {:>10.2}  {:>13.1}\n",
            s.variant.name(),
            s.median_mpjpe,
            s.reference_mm
        ));
    }
    print!("{table}");
    ctx.write("ablation_table.txt", table.as_bytes())?;
    ctx.write_json(
        "ablation.json",
        &AblationOutput {
            config_hash: &ctx.hash,
            seeds,
            rows: &rows,
            summary,
        },
    )?;
    if interrupted {
        return Err(CliError::Interrupted);
    }
    Ok(())
}
