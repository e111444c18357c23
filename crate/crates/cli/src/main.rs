use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use past_core::data::{synthesize_dataset, window_split, SynthConfig, TrafficDataset};
use past_core::error::{PastError, Result};
use past_core::harness::{rmse_mae, run_experiment, ExperimentPlan};
use past_core::masking::{MaskMatrix, ScenarioConfig};
use past_core::model::{load_checkpoint, save_checkpoint, PastConfig, PastModel, TrainConfig, Variant};
use past_core::numcore::NumArray;

/// Spatio-temporal traffic imputation.
#[derive(Parser, Debug)]
#[command(name = "past", version)]
struct Cli {
    /// Seed for every random stream the command uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (values CSV + graph JSON).
    Synth(SynthArgs),
    /// Write a missing-data mask for a dataset.
    Mask(MaskArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Fill the missing entries of a dataset with a checkpoint.
    Impute(ImputeArgs),
    /// Score imputed values against ground truth on the masked entries.
    Evaluate(EvaluateArgs),
    /// Run an experiment plan (JSON).
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Values CSV, one column per node.
    #[arg(long)]
    values: PathBuf,
    /// Graph JSON (nodes, edges, calendar).
    #[arg(long)]
    graph: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<TrafficDataset> {
        TrafficDataset::from_files(&self.values, &self.graph)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 20)]
    days: usize,
    #[arg(long, default_value_t = 15)]
    step_minutes: u32,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Random,
    Fiber,
    Block,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Missing rate in (0, 1).
    #[arg(long)]
    rate: f64,
    /// Maximum gap length (fiber, block).
    #[arg(long)]
    max_len: Option<usize>,
    /// Nodes per block.
    #[arg(long)]
    span: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Full,
    WithoutCgm,
    WithoutGim,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Observation mask CSV (1 = observed); all observed when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON with optional `model` and `train` objects; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    k_order: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 24)]
    stride: usize,
    /// Leading fraction of the series used for training and normalization.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Imputed values CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth values CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Mask CSV; entries with 0 are scored.
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the plan's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct TrainFile {
    model: PastConfig,
    train: TrainConfig,
}

fn load_mask(path: Option<&Path>, ds: &TrafficDataset) -> Result<MaskMatrix> {
    let mask = match path {
        Some(p) => MaskMatrix::read_csv(p)?,
        None => MaskMatrix::all_observed(ds.n_steps(), ds.n_nodes()),
    };
    mask.bits().expect_shape(ds.values.shape(), "mask (against values)")?;
    Ok(mask)
}

fn hide_missing(ds: &mut TrafficDataset, mask: &MaskMatrix) {
    for (v, m) in ds.values.data_mut().iter_mut().zip(mask.bits().data()) {
        if *m != 1.0 {
            *v = 0.0;
        }
    }
}

fn synth(seed: u64, a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig { n_nodes: a.nodes, n_days: a.days, step_minutes: a.step_minutes, seed, noise_level: a.noise };
    let ds = synthesize_dataset(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    ds.write_files(&a.out_dir.join("values.csv"), &a.out_dir.join("graph.json"))?;
    println!("wrote {} steps x {} nodes to {}", ds.n_steps(), ds.n_nodes(), a.out_dir.display());
    Ok(())
}

fn mask(seed: u64, a: &MaskArgs) -> Result<()> {
    let ds = a.data.load()?;
    let need = |v: Option<usize>, flag: &str| {
        v.ok_or_else(|| PastError::InvalidConfig(format!("--{flag} is required for this kind")))
    };
    let scenario = match a.kind {
        Kind::Random => ScenarioConfig::random(a.rate),
        Kind::Fiber => ScenarioConfig::fiber(a.rate, need(a.max_len, "max-len")?),
        Kind::Block => ScenarioConfig::block(a.rate, need(a.max_len, "max-len")?, need(a.span, "span")?),
    };
    let m = scenario.generate(ds.n_steps(), ds.n_nodes(), Some(&ds.adjacency()?), seed)?;
    m.write_csv(&a.out)?;
    println!("{}: {} of {} entries missing", scenario.label(), m.missing_count(), ds.values.len());
    Ok(())
}

fn train(seed: u64, a: &TrainArgs) -> Result<()> {
    let ds = a.data.load()?;
    let mask = load_mask(a.mask.as_deref(), &ds)?;
    let file: TrainFile = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainFile::default(),
    };
    let mut model_cfg = PastConfig { n_nodes: ds.n_nodes(), ..file.model };
    let mut train_cfg = TrainConfig { seed, ..file.train };
    model_cfg.seq_len = a.seq_len.unwrap_or(model_cfg.seq_len);
    model_cfg.d = a.d.unwrap_or(model_cfg.d);
    model_cfg.n_layers = a.layers.unwrap_or(model_cfg.n_layers);
    model_cfg.k_order = a.k_order.unwrap_or(model_cfg.k_order);
    if let Some(v) = a.variant {
        model_cfg.variant = match v {
            VariantArg::Full => Variant::Full,
            VariantArg::WithoutCgm => Variant::WithoutCgm,
            VariantArg::WithoutGim => Variant::WithoutGim,
        };
    }
    train_cfg.epochs = a.epochs.unwrap_or(train_cfg.epochs);
    train_cfg.lr = a.lr.unwrap_or(train_cfg.lr);
    train_cfg.batch_size = a.batch_size.unwrap_or(train_cfg.batch_size);

    let mut norm = ds.normalize(a.train_fraction, &mask)?;
    hide_missing(&mut norm, &mask);
    let (windows, _) = window_split(&norm, model_cfg.seq_len, a.stride, a.train_fraction, &mask)?;
    let mut model = PastModel::new(model_cfg, &ds.adjacency()?, seed)?;
    model.norm_stats = norm.norm_stats;
    let history = model.train(&windows, &train_cfg)?;
    save_checkpoint(&model, &a.out)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs on {} windows: loss1={:.6} loss2={:.6}",
            history.epochs.len(),
            windows.len(),
            last.loss1,
            last.loss2
        );
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn impute(a: &ImputeArgs) -> Result<()> {
    let ds = a.data.load()?;
    let mask = load_mask(Some(&a.mask), &ds)?;
    let model = load_checkpoint(&a.checkpoint)?;
    if model.config.n_nodes != ds.n_nodes() {
        return Err(PastError::Shape(format!(
            "checkpoint expects {} nodes, dataset has {}",
            model.config.n_nodes,
            ds.n_nodes()
        )));
    }
    let stats = model
        .norm_stats
        .ok_or_else(|| PastError::Checkpoint("checkpoint carries no normalization statistics".into()))?;
    let mut norm = ds.clone();
    norm.values = ds.values.map(|v| stats.apply(v));
    norm.norm_stats = Some(stats);
    hide_missing(&mut norm, &mask);
    let y = model.impute_span(&norm, &mask, 0, ds.n_steps())?;
    let mut out = y.map(|z| stats.invert(z));
    // observed entries are written back verbatim, not through the round trip
    for (o, (v, m)) in out.data_mut().iter_mut().zip(ds.values.data().iter().zip(mask.bits().data())) {
        if *m == 1.0 {
            *o = *v;
        }
    }
    past_core::data::write_values_csv(&a.out, &out, Some(&ds.node_ids))?;
    println!("imputed {} missing entries into {}", mask.missing_count(), a.out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (pred, _) = past_core::data::read_values_csv(&a.pred)?;
    let (truth, _) = past_core::data::read_values_csv(&a.truth)?;
    let mask = MaskMatrix::read_csv(&a.mask)?;
    let eval: NumArray = mask.bits().map(|m| 1.0 - m);
    let (rmse, mae) = rmse_mae(&pred, &truth, &eval)?;
    println!("{}", serde_json::json!({ "rmse": rmse, "mae": mae, "scored": mask.missing_count() }));
    Ok(())
}

fn experiment(seed: Option<u64>, a: &ExperimentArgs) -> Result<()> {
    let mut plan = ExperimentPlan::from_json_file(&a.config)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    if let Some(dir) = &a.out_dir {
        plan.output_dir = Some(dir.clone());
    }
    let report = run_experiment(&plan)?;
    for r in &report.results {
        println!(
            "{:<24} {:<12} {:<8} rmse={:.4} mae={:.4} ({:.1}s)",
            r.scenario,
            r.method.name(),
            r.setting.name(),
            r.rmse,
            r.mae,
            r.runtime_seconds
        );
    }
    for e in &report.errors {
        eprintln!("error in {} / {:?}: {}", e.scenario, e.method.map(|m| m.name()), e.message);
    }
    if report.results.is_empty() && !report.errors.is_empty() {
        return Err(PastError::InvalidConfig("every experiment cell failed".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth(a) => synth(seed, a),
        Command::Mask(a) => mask(seed, a),
        Command::Train(a) => train(seed, a),
        Command::Impute(a) => impute(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(cli.seed, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
