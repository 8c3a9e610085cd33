//! Command-line driver: dataset generation, training, batch attacks, subset
//! inspection, size sweeps, cooperation analysis, and checkpoint evaluation.
//! Every tunable has a flag; `--config file.json` supplies defaults that
//! explicit flags override.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use scp::attack::AttackConfig;
use scp::classifier::{Activation, Loss, PointClassifier, TrainConfig};
use scp::harness::{
    cooperation_histogram, evaluate_model, read_results, run_attack_batch, run_size_sweep,
    write_report, write_results, BatchOptions, ReportRow,
};
use scp::objective::ClassifierObjective;
use scp::pointset_io::{gen_synthetic, load_dataset, GenSpec, ShapeClass};
use scp::selection::{select, SelectionConfig, SelectionMode};

#[derive(Parser)]
#[command(
    name = "scp",
    about = "Sparse cooperative perturbations against point-cloud classifiers"
)]
struct Cli {
    /// JSON file of config overrides; explicit flags still win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset
    GenData(GenDataArgs),
    /// Train a point classifier on a generated dataset
    Train(TrainArgs),
    /// Attack every correctly-classified test sample
    Attack(AttackArgs),
    /// Print the cooperative subset for one sample
    Select(SelectArgs),
    /// Rerun the attack at several subset-size caps
    SizeSweep(SizeSweepArgs),
    /// Histogram pairwise cooperation over recorded attacks
    AnalyzeCoop(AnalyzeCoopArgs),
    /// Report checkpoint accuracy per split and class
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the .xyz files and manifest.json
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated class names (default: all eight)
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Points per cloud
    #[arg(long)]
    points: Option<usize>,
    /// Gaussian jitter standard deviation
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Shuffling seed
    #[arg(long)]
    seed: Option<u64>,
    /// tanh | softplus | relu
    #[arg(long)]
    activation: Option<String>,
    /// Weight initialization seed
    #[arg(long)]
    model_seed: Option<u64>,
}

#[derive(Args)]
struct SelectionArgs {
    /// greedy | full_hessian | gradient_topk | random
    #[arg(long)]
    mode: Option<String>,
    /// Screening pool size
    #[arg(long)]
    k: Option<usize>,
    /// Curvature acceptance tolerance
    #[arg(long)]
    epsilon: Option<f64>,
    /// Subset size cap
    #[arg(long)]
    t_max: Option<usize>,
    /// Selection seed (random mode)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AttackFlagArgs {
    /// Distortion-weight search rounds
    #[arg(long)]
    rounds: Option<usize>,
    /// Adam steps per round
    #[arg(long)]
    steps: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_init: Option<f64>,
    #[arg(long)]
    weight_lo: Option<f64>,
    #[arg(long)]
    weight_hi: Option<f64>,
}

#[derive(Args)]
struct LossArgs {
    /// cw_margin | neg_cross_entropy
    #[arg(long)]
    loss: Option<String>,
    /// Margin saturation for cw_margin
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Results JSONL output path
    #[arg(long)]
    results: PathBuf,
    /// Optional CSV report path
    #[arg(long)]
    report: Option<PathBuf>,
    /// Attack at most this many samples
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Report-row tag (defaults to the selection mode)
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    attack: AttackFlagArgs,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Sample id (file stem), e.g. sphere_0093
    #[arg(long)]
    id: String,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Args)]
struct SizeSweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory for per-size results files and report.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated subset-size caps (default: 2,5,10,20,64)
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    attack: AttackFlagArgs,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Args)]
struct AnalyzeCoopArgs {
    /// Results JSONL from a previous attack run
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Histogram CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Convex-mixture draws per subset
    #[arg(long)]
    draws: Option<usize>,
    /// Mixture sampling seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

/// Optional defaults loaded from `--config`. Sections mirror the flag
/// groups; unknown keys are rejected so typos surface instead of silently
/// falling back.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    gen: GenSection,
    train: TrainSection,
    selection: SelectionSection,
    attack: AttackSection,
    coop: CoopSection,
    loss: Option<String>,
    kappa: Option<f64>,
    workers: Option<usize>,
    limit: Option<usize>,
    sizes: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenSection {
    classes: Option<Vec<String>>,
    per_class: Option<usize>,
    points: Option<usize>,
    jitter: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    activation: Option<String>,
    model_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SelectionSection {
    mode: Option<String>,
    k: Option<usize>,
    epsilon: Option<f64>,
    t_max: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AttackSection {
    rounds: Option<usize>,
    steps: Option<usize>,
    lr: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    weight_init: Option<f64>,
    weight_lo: Option<f64>,
    weight_hi: Option<f64>,
    chamfer_weight: Option<f64>,
    hausdorff_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CoopSection {
    draws: Option<usize>,
    seed: Option<u64>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// flag > config > default.
fn pick<T>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

fn build_selection(args: &SelectionArgs, cfg: &ConfigFile) -> anyhow::Result<SelectionConfig> {
    let d = SelectionConfig::default();
    let mode = match args.mode.clone().or_else(|| cfg.selection.mode.clone()) {
        Some(name) => SelectionMode::from_name(&name)?,
        None => d.mode,
    };
    Ok(SelectionConfig {
        mode,
        k: pick(args.k, cfg.selection.k, d.k),
        epsilon: pick(args.epsilon, cfg.selection.epsilon, d.epsilon),
        t_max: pick(args.t_max, cfg.selection.t_max, d.t_max),
        seed: pick(args.seed, cfg.selection.seed, d.seed),
    })
}

fn build_attack(args: &AttackFlagArgs, cfg: &ConfigFile) -> AttackConfig {
    let d = AttackConfig::default();
    AttackConfig {
        adam_lr: pick(args.lr, cfg.attack.lr, d.adam_lr),
        adam_beta1: cfg.attack.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: cfg.attack.adam_beta2.unwrap_or(d.adam_beta2),
        rounds: pick(args.rounds, cfg.attack.rounds, d.rounds),
        steps: pick(args.steps, cfg.attack.steps, d.steps),
        weight_init: pick(args.weight_init, cfg.attack.weight_init, d.weight_init),
        weight_min: pick(args.weight_lo, cfg.attack.weight_lo, d.weight_min),
        weight_max: pick(args.weight_hi, cfg.attack.weight_hi, d.weight_max),
        chamfer_weight: cfg.attack.chamfer_weight.unwrap_or(d.chamfer_weight),
        hausdorff_weight: cfg.attack.hausdorff_weight.unwrap_or(d.hausdorff_weight),
    }
}

fn build_loss(args: &LossArgs, cfg: &ConfigFile) -> anyhow::Result<Loss> {
    let kappa = pick(args.kappa, cfg.kappa, 0.0);
    match args.loss.clone().or_else(|| cfg.loss.clone()) {
        Some(name) => Ok(Loss::from_name(&name, kappa)?),
        None => Ok(Loss::CwMargin { kappa }),
    }
}

fn cmd_gen_data(args: &GenDataArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let name_list: Option<Vec<String>> = args
        .classes
        .as_ref()
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect())
        .or_else(|| cfg.gen.classes.clone());
    let classes = match name_list {
        Some(names) => names
            .iter()
            .map(|n| ShapeClass::from_name(n))
            .collect::<Result<Vec<_>, _>>()?,
        None => ShapeClass::ALL.to_vec(),
    };
    let d = GenSpec::default();
    let spec = GenSpec {
        classes,
        per_class: pick(args.per_class, cfg.gen.per_class, d.per_class),
        n_points: pick(args.points, cfg.gen.points, d.n_points),
        jitter_sigma: pick(args.jitter, cfg.gen.jitter, d.jitter_sigma),
        seed: pick(args.seed, cfg.gen.seed, d.seed),
    };
    let manifest = gen_synthetic(&args.out, &spec)?;
    println!(
        "wrote {} samples across {} classes to {}",
        manifest.samples.len(),
        manifest.classes.len(),
        args.out.display()
    );
    println!("manifest: {}", args.out.join("manifest.json").display());
    Ok(())
}

fn cmd_train(args: &TrainArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let data = load_dataset(&args.manifest)?;
    let activation = Activation::from_name(&pick(
        args.activation.clone(),
        cfg.train.activation.clone(),
        "tanh".to_string(),
    ))?;
    let d = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, cfg.train.epochs, d.epochs),
        lr: pick(args.lr, cfg.train.lr, d.lr),
        batch_size: pick(args.batch_size, cfg.train.batch_size, d.batch_size),
        seed: pick(args.seed, cfg.train.seed, d.seed),
    };
    let model_seed = pick(args.model_seed, cfg.train.model_seed, 0);
    let mut model = PointClassifier::with_defaults(data.num_classes(), activation, model_seed)?;
    let report = model.train(&data, &train_cfg)?;
    model.save(&args.out)?;
    println!(
        "trained {} epochs, final train loss {:.6}",
        report.epochs, report.final_train_loss
    );
    println!("train accuracy: {:.4}", report.train_accuracy);
    println!("test accuracy: {:.4}", report.test_accuracy);
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn batch_options(
    selection: &SelectionArgs,
    attack: &AttackFlagArgs,
    loss: &LossArgs,
    workers: Option<usize>,
    limit: Option<usize>,
    method: Option<String>,
    cfg: &ConfigFile,
) -> anyhow::Result<BatchOptions> {
    Ok(BatchOptions {
        selection: build_selection(selection, cfg)?,
        attack: build_attack(attack, cfg),
        loss: build_loss(loss, cfg)?,
        workers: pick(workers, cfg.workers, 1),
        limit: limit.or(cfg.limit),
        method,
    })
}

fn cmd_attack(args: &AttackArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let data = load_dataset(&args.manifest)?;
    let model = PointClassifier::load(&args.model)?;
    let opts = batch_options(
        &args.selection,
        &args.attack,
        &args.loss,
        args.workers,
        args.limit,
        args.method.clone(),
        cfg,
    )?;
    let summary = run_attack_batch(&model, &data, &opts)?;
    write_results(&summary.records, &args.results)?;
    if let Some(report_path) = &args.report {
        write_report(std::slice::from_ref(&summary.report), report_path)?;
    }
    println!(
        "attacked {} samples, {} skipped as already misclassified",
        summary.attacked, summary.skipped_misclassified
    );
    println!("{}", ReportRow::CSV_HEADER);
    println!("{}", summary.report.csv_line());
    println!("results: {}", args.results.display());
    Ok(())
}

fn cmd_select(args: &SelectArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let data = load_dataset(&args.manifest)?;
    let model = PointClassifier::load(&args.model)?;
    let Some(cloud) = data.clouds.iter().find(|c| c.id == args.id) else {
        bail!("sample id {:?} not found in {}", args.id, args.manifest.display());
    };
    let selection = build_selection(&args.selection, cfg)?;
    let loss = build_loss(&args.loss, cfg)?;
    let objective = ClassifierObjective::new(&model, cloud, loss)?;
    let subset = select(&objective, &selection)?;
    let line = serde_json::json!({
        "id": cloud.id,
        "mode": subset.mode.name(),
        "indices": subset.indices,
        "init_index": subset.init_index,
        "init_lambda": subset.init_lambda,
        "surpluses": subset.surpluses,
        "rejected": subset.rejected.len(),
        "fallback": subset.fallback,
    });
    println!("{line}");
    Ok(())
}

fn cmd_size_sweep(args: &SizeSweepArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let data = load_dataset(&args.manifest)?;
    let model = PointClassifier::load(&args.model)?;
    let sizes: Vec<usize> = match &args.sizes {
        Some(text) => text
            .split(',')
            .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad size {t:?}")))
            .collect::<anyhow::Result<_>>()?,
        None => cfg.sizes.clone().unwrap_or_else(|| vec![2, 5, 10, 20, 64]),
    };
    let base = batch_options(
        &args.selection,
        &args.attack,
        &args.loss,
        args.workers,
        args.limit,
        None,
        cfg,
    )?;
    let sweep = run_size_sweep(&model, &data, &base, &sizes)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut rows = Vec::with_capacity(sweep.len());
    println!("{}", ReportRow::CSV_HEADER);
    for (t, summary) in &sweep {
        write_results(&summary.records, args.out_dir.join(format!("results_t{t}.jsonl")))?;
        println!("{}", summary.report.csv_line());
        rows.push(summary.report.clone());
    }
    let report_path = args.out_dir.join("report.csv");
    write_report(&rows, &report_path)?;
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_analyze_coop(args: &AnalyzeCoopArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let records = read_results(&args.results)?;
    let data = load_dataset(&args.manifest)?;
    let model = PointClassifier::load(&args.model)?;
    let loss = build_loss(&args.loss, cfg)?;
    let draws = pick(args.draws, cfg.coop.draws, 100);
    let seed = pick(args.seed, cfg.coop.seed, 0);
    let hist = cooperation_histogram(&model, &data, &records, loss, draws, seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    fs::write(&args.out, hist.csv())
        .with_context(|| format!("writing {}", args.out.display()))?;
    let (cooperative, counteractive) = hist.totals();
    println!("cooperative pairs: {cooperative}");
    println!("counteractive pairs: {counteractive}");
    println!("histogram: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let data = load_dataset(&args.manifest)?;
    let model = PointClassifier::load(&args.model)?;
    let report = evaluate_model(&model, &data)?;
    println!("train accuracy: {:.4}", report.train_accuracy);
    println!("test accuracy: {:.4}", report.test_accuracy);
    for (name, count, accuracy) in &report.per_class_test {
        println!("  {name}: {count} test samples, accuracy {accuracy:.4}");
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(args) => cmd_gen_data(args, &cfg),
        Command::Train(args) => cmd_train(args, &cfg),
        Command::Attack(args) => cmd_attack(args, &cfg),
        Command::Select(args) => cmd_select(args, &cfg),
        Command::SizeSweep(args) => cmd_size_sweep(args, &cfg),
        Command::AnalyzeCoop(args) => cmd_analyze_coop(args, &cfg),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
