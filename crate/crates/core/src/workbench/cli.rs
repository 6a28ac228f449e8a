//! Command-line front end: train, calibrate, convert, simulate, analyze, sweep-shift, scaling, synth.
//!
//! Option values come from flags, then from the `--config` JSON file (either a flat object or
//! one keyed by subcommand name), then from built-in defaults. Every output file carries
//! `format_version`, the seed and the fully resolved option set.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{scaling_experiment, shift_sweep, write_csv, ConversionReport};
use crate::ann::{evaluate_accuracy, sgd_train, Activation, AnnModel, TrainConfig};
use crate::convert::{
    calibrate, convert, CalibrationResult, ConversionConfig, ShiftMode, ThresholdMode,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::snn::{simulate_with, Readout, SnnModel};

use super::dataset_file::{load_dataset, save_dataset};
use super::idx::{load_idx, IdxOptions};
use super::model_file::{load_ann, load_snn, save_model, ModelFile};
use super::synth::{synth_uniform_benchmark, PatternConfig, PatternTask};

pub const OUTPUT_FORMAT_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "SNNFORGE_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "snnforge",
    version,
    about = "Threshold-ReLU ANN to integrate-and-fire SNN conversion workbench"
)]
struct Cli {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with option values; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to SNNFORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reject IDX files with bytes after the payload.
    #[arg(long, global = true)]
    strict_idx: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an ANN with momentum SGD.
    Train(TrainArgs),
    /// Record per-layer thresholds from ANN activations.
    Calibrate(CalibrateArgs),
    /// Build an SNN from an ANN and its thresholds.
    Convert(ConvertArgs),
    /// Run an SNN on a dataset and report its accuracy.
    Simulate(SimulateArgs),
    /// Compare an ANN with a converted SNN over several simulation lengths.
    Analyze(AnalyzeArgs),
    /// Measure the layer error objective over a grid of bias shifts.
    SweepShift(SweepArgs),
    /// Measure output error against simulation length.
    Scaling(ScalingArgs),
    /// Generate a synthetic benchmark.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct DataArgs {
    /// IDX images file (with --labels).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX labels file (with --images).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// JSON dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use a seeded random subset of this many samples.
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum ActivationArg {
    ThresholdRelu,
    Relu,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Output model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from this model instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Hidden layer widths of a fresh dense model.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    /// Clip level of threshold ReLU.
    #[arg(long)]
    y_th: Option<f64>,
    /// Dropout probability after every hidden layer (0 disables).
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    threshold_warmup_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum ThresholdModeArg {
    Max,
    Percentile,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// ANN model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output thresholds file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    threshold_mode: Option<ThresholdModeArg>,
    /// Percentile in (0, 1] for --threshold-mode percentile.
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum ShiftArg {
    None,
    HalfVthOverT,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum ReadoutArg {
    AccumulatePotential,
    SpikeCount,
}

impl From<ReadoutArg> for Readout {
    fn from(r: ReadoutArg) -> Self {
        match r {
            ReadoutArg::AccumulatePotential => Readout::AccumulatePotential,
            ReadoutArg::SpikeCount => Readout::SpikeCount,
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ConvertArgs {
    /// ANN model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Thresholds file written by `calibrate`.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Output SNN model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Target simulation length.
    #[arg(short = 'T', long = "steps")]
    #[serde(rename = "T")]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    shift: Option<ShiftArg>,
    /// Multiple of v_th added to the bias with --shift custom.
    #[arg(long)]
    shift_scale: Option<f64>,
    /// Shift the output layer's bias too.
    #[arg(long)]
    shift_output_layer: bool,
    #[arg(long, value_enum)]
    readout: Option<ReadoutArg>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// SNN model file.
    #[arg(long)]
    snn: Option<PathBuf>,
    #[arg(short = 'T', long = "steps")]
    #[serde(rename = "T")]
    steps: Option<usize>,
    /// Report file (printed to stdout only when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    snn: Option<PathBuf>,
    /// Simulation lengths to evaluate.
    #[arg(long = "t-list", value_delimiter = ',')]
    #[serde(rename = "T_list")]
    t_list: Option<Vec<usize>>,
    /// Report JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV with one row per (T, layer).
    #[arg(long)]
    layer_csv: Option<PathBuf>,
    /// Thresholds file; enables a shift sweep at the largest T.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// CSV with one row per sweep point.
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(short = 'T', long = "steps")]
    #[serde(rename = "T")]
    steps: Option<usize>,
    /// Evenly spaced shifts in [0, grid_max].
    #[arg(long)]
    grid_points: Option<usize>,
    /// Largest shift; defaults to the largest hidden-layer v_th divided by T.
    #[arg(long)]
    grid_max: Option<f64>,
    /// Explicit shift values (overrides the even grid).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ScalingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long = "t-list", value_delimiter = ',')]
    #[serde(rename = "T_list")]
    t_list: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum SynthKind {
    Uniform,
    Patterns,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Option<SynthKind>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Hidden width of the uniform benchmark.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    v_th: Option<f64>,
    /// Seed of the drawn samples for `patterns` (the global seed fixes the class prototypes).
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Pixel noise level for `patterns`.
    #[arg(long)]
    noise: Option<f64>,
    /// Output dataset file.
    #[arg(long)]
    out_data: Option<PathBuf>,
    /// Output model file (uniform only).
    #[arg(long)]
    out_model: Option<PathBuf>,
}

/// Everything a command needs besides its own options.
struct Context {
    seed: u64,
    strict_idx: bool,
}

/// Runs the CLI on `argv` (program name first) and returns the process exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on data, format or i/o errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Format(_) | Error::Io { .. } | Error::Dimension { .. } => 2,
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let threads = match threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // Ignored if the global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| {
                Error::Format(format!("config file {} is not JSON: {e}", path.display()))
            })?;
            if !value.is_object() {
                return Err(Error::Format("config file must hold a JSON object".into()));
            }
            Some(value)
        }
        None => None,
    };
    let seed = cli
        .seed
        .or_else(|| {
            file.as_ref()
                .and_then(|f| f.get("seed"))
                .and_then(Value::as_u64)
        })
        .unwrap_or(0);
    let ctx = Context {
        seed,
        strict_idx: cli.strict_idx
            || file
                .as_ref()
                .and_then(|f| f.get("strict_idx"))
                .and_then(Value::as_bool)
                == Some(true),
    };
    let file = file.as_ref();
    match cli.command {
        Command::Train(a) => train(&ctx, resolve(a, file, "train")?),
        Command::Calibrate(a) => calibrate_cmd(&ctx, resolve(a, file, "calibrate")?),
        Command::Convert(a) => convert_cmd(&ctx, resolve(a, file, "convert")?),
        Command::Simulate(a) => simulate_cmd(&ctx, resolve(a, file, "simulate")?),
        Command::Analyze(a) => analyze_cmd(&ctx, resolve(a, file, "analyze")?),
        Command::SweepShift(a) => sweep_cmd(&ctx, resolve(a, file, "sweep_shift")?),
        Command::Scaling(a) => scaling_cmd(&ctx, resolve(a, file, "scaling")?),
        Command::Synth(a) => synth_cmd(&ctx, resolve(a, file, "synth")?),
    }
}

/// Overlays the flags on the config file section: null and `false` flag values count as unset.
fn resolve<A: Serialize + DeserializeOwned>(
    args: A,
    file: Option<&Value>,
    section: &str,
) -> Result<A> {
    let Some(file) = file else { return Ok(args) };
    let mut merged = match file.get(section) {
        Some(Value::Object(m)) => m.clone(),
        _ => file.as_object().cloned().unwrap_or_default(),
    };
    let flags = serde_json::to_value(&args).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in flags.as_object().into_iter().flatten() {
        if !(v.is_null() || *v == Value::Bool(false)) {
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::Config(format!("config file: {e}")))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing required option --{flag}")))
}

fn echo<A: Serialize>(args: &A) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn envelope(ctx: &Context, command: &str, config: Value, body: Value) -> Value {
    let mut out = json!({
        "format_version": OUTPUT_FORMAT_VERSION,
        "command": command,
        "seed": ctx.seed,
        "config": config,
    });
    if let (Some(o), Value::Object(b)) = (out.as_object_mut(), body) {
        o.extend(b);
    }
    out
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn announce(ctx: &Context, config: &Value) {
    println!("seed: {}", ctx.seed);
    println!("config: {config}");
}

fn load_data(ctx: &Context, args: &DataArgs) -> Result<Dataset> {
    let data = match (&args.images, &args.labels, &args.data) {
        (Some(images), Some(labels), None) => load_idx(
            images,
            labels,
            IdxOptions {
                strict: ctx.strict_idx,
            },
        )?,
        (None, None, Some(path)) => load_dataset(path)?,
        (None, None, None) => {
            return Err(Error::Config(
                "a dataset is required: --images and --labels, or --data".into(),
            ))
        }
        _ => {
            return Err(Error::Config(
                "give either both --images and --labels, or --data alone".into(),
            ))
        }
    };
    Ok(match args.subsample {
        Some(n) => data.subsample(n, ctx.seed),
        None => data,
    })
}

fn load_thresholds(path: &Path) -> Result<CalibrationResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let calib: CalibrationResult = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("malformed thresholds file {}: {e}", path.display())))?;
    calib.validate()?;
    Ok(calib)
}

fn check_steps(steps: usize) -> Result<usize> {
    if steps < 1 {
        return Err(Error::Config(format!("T must be >= 1, got {steps}")));
    }
    Ok(steps)
}

fn train(ctx: &Context, mut a: TrainArgs) -> Result<()> {
    let out = required(&a.out, "out")?.clone();
    let data = load_data(ctx, &a.data)?;
    let epochs = *a.epochs.get_or_insert(10);
    let defaults = TrainConfig::with_epochs(epochs);
    let cfg = TrainConfig {
        learning_rate: *a.learning_rate.get_or_insert(defaults.learning_rate),
        momentum: *a.momentum.get_or_insert(defaults.momentum),
        weight_decay: *a.weight_decay.get_or_insert(defaults.weight_decay),
        epochs,
        batch_size: *a.batch_size.get_or_insert(defaults.batch_size),
        lr_decay_epochs: a
            .lr_decay_epochs
            .get_or_insert(defaults.lr_decay_epochs)
            .clone(),
        lr_decay_factor: *a.lr_decay_factor.get_or_insert(defaults.lr_decay_factor),
        threshold_warmup_epochs: *a
            .threshold_warmup_epochs
            .get_or_insert(defaults.threshold_warmup_epochs),
        seed: ctx.seed,
    };
    cfg.validate()?;
    let model = match &a.init {
        Some(path) => load_ann(path)?,
        None => {
            let y_th = *a.y_th.get_or_insert(1.0);
            let activation = match *a.activation.get_or_insert(ActivationArg::ThresholdRelu) {
                ActivationArg::ThresholdRelu => Activation::ThresholdRelu { y_th },
                ActivationArg::Relu => Activation::Relu,
            };
            let dropout = *a.dropout.get_or_insert(0.0);
            let mut builder = AnnModel::builder(&data.input_shape);
            for &h in a.hidden.get_or_insert_with(|| vec![100]).iter() {
                builder = builder.dense(h, activation);
                if dropout > 0.0 {
                    builder = builder.dropout(dropout);
                }
            }
            builder
                .dense(data.num_classes, Activation::None)
                .build(ctx.seed)?
        }
    };
    let config = echo(&a);
    announce(ctx, &config);
    let (trained, report) = sgd_train(&model, &data, &cfg)?;
    let accuracy = evaluate_accuracy(&trained, &data)?;
    println!("train accuracy: {accuracy}");
    let meta = json!({
        "seed": ctx.seed,
        "command": "train",
        "config": config,
        "train_config": cfg,
        "train_accuracy": accuracy,
        "loss_history": report.loss_history,
    });
    save_model(&ModelFile::from_ann(&trained, meta), &out)
}

fn calibrate_cmd(ctx: &Context, mut a: CalibrateArgs) -> Result<()> {
    let out = required(&a.out, "out")?.clone();
    let model = load_ann(required(&a.model, "model")?)?;
    let data = load_data(ctx, &a.data)?;
    let mode = match *a.threshold_mode.get_or_insert(ThresholdModeArg::Max) {
        ThresholdModeArg::Max => ThresholdMode::Max,
        ThresholdModeArg::Percentile => ThresholdMode::Percentile {
            p: *a.percentile.get_or_insert(0.999),
        },
    };
    let config = echo(&a);
    announce(ctx, &config);
    let calib = calibrate(&model, &data, mode)?;
    println!("thresholds: {:?}", calib.v_th_per_layer);
    let body = serde_json::to_value(&calib).map_err(|e| Error::Format(e.to_string()))?;
    write_json(&out, &envelope(ctx, "calibrate", config, body))
}

fn convert_cmd(ctx: &Context, mut a: ConvertArgs) -> Result<()> {
    let steps = check_steps(*required(&a.steps, "steps")?)?;
    let out = required(&a.out, "out")?.clone();
    let shift_mode = match *a.shift.get_or_insert(ShiftArg::HalfVthOverT) {
        ShiftArg::None => ShiftMode::None,
        ShiftArg::HalfVthOverT => ShiftMode::HalfVthOverT,
        ShiftArg::Custom => ShiftMode::Custom {
            scale: *required(&a.shift_scale, "shift-scale")?,
        },
    };
    let readout = Readout::from(*a.readout.get_or_insert(ReadoutArg::AccumulatePotential));
    let calib = load_thresholds(required(&a.thresholds, "thresholds")?)?;
    let cfg = ConversionConfig {
        steps,
        shift_mode,
        shift_output_layer: a.shift_output_layer,
        threshold_mode: calib.threshold_mode,
        readout,
    };
    cfg.validate()?;
    let model = load_ann(required(&a.model, "model")?)?;
    let config = echo(&a);
    announce(ctx, &config);
    let snn = convert(&model, &calib, &cfg)?;
    let meta = json!({
        "format_version": OUTPUT_FORMAT_VERSION,
        "seed": ctx.seed,
        "command": "convert",
        "config": config,
        "conversion": cfg,
    });
    save_model(&ModelFile::from_snn(&snn, meta), &out)
}

#[derive(Serialize)]
struct LayerActivity {
    layer: usize,
    v_th: f64,
    fires: bool,
    mean_spikes_per_neuron: f64,
}

fn simulate_cmd(ctx: &Context, a: SimulateArgs) -> Result<()> {
    let steps = check_steps(*required(&a.steps, "steps")?)?;
    let snn = load_snn(required(&a.snn, "snn")?)?;
    let data = load_data(ctx, &a.data)?;
    let config = echo(&a);
    announce(ctx, &config);
    data.ensure_nonempty("simulate")?;
    let (correct, activity) = simulate_dataset(&snn, &data, steps)?;
    let accuracy = correct as f64 / data.len() as f64;
    println!("accuracy: {accuracy}");
    let body = json!({
        "T": steps,
        "n_samples": data.len(),
        "correct": correct,
        "accuracy": accuracy,
        "layers": activity,
    });
    let report = envelope(ctx, "simulate", config, body);
    match &a.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{report}");
            Ok(())
        }
    }
}

fn simulate_dataset(
    snn: &SnnModel,
    data: &Dataset,
    steps: usize,
) -> Result<(usize, Vec<LayerActivity>)> {
    use rayon::prelude::*;
    let per_sample: Vec<Result<(bool, Vec<f64>)>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &label)| {
            let trace = simulate_with(snn, x, steps, false)?;
            let spikes = trace
                .layers
                .iter()
                .map(|l| {
                    l.spike_counts.iter().map(|&c| f64::from(c)).sum::<f64>()
                        / l.spike_counts.len() as f64
                })
                .collect();
            Ok((trace.scores().argmax() == label, spikes))
        })
        .collect();
    let mut correct = 0;
    let mut sums = vec![0.0; snn.num_weighted_layers()];
    for sample in per_sample {
        let (ok, spikes) = sample?;
        correct += usize::from(ok);
        for (s, v) in sums.iter_mut().zip(spikes) {
            *s += v;
        }
    }
    let n_firing = snn.num_firing_layers();
    let activity = snn
        .thresholds()
        .into_iter()
        .zip(sums)
        .enumerate()
        .map(|(layer, (v_th, s))| LayerActivity {
            layer,
            v_th,
            fires: layer < n_firing,
            mean_spikes_per_neuron: s / data.len() as f64,
        })
        .collect();
    Ok((correct, activity))
}

fn even_grid(points: usize, max: f64) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::Config("grid_points must be >= 1".into()));
    }
    if points == 1 {
        return Ok(vec![0.0]);
    }
    Ok((0..points)
        .map(|i| max * i as f64 / (points - 1) as f64)
        .collect())
}

fn hidden_vth_max(calib: &CalibrationResult) -> f64 {
    let v = &calib.v_th_per_layer;
    let hidden = if v.len() > 1 {
        &v[..v.len() - 1]
    } else {
        &v[..]
    };
    hidden.iter().copied().fold(0.0, f64::max)
}

fn analyze_cmd(ctx: &Context, mut a: AnalyzeArgs) -> Result<()> {
    let t_list = required(&a.t_list, "t-list")?.clone();
    for &t in &t_list {
        check_steps(t)?;
    }
    let out = required(&a.out, "out")?.clone();
    let ann = load_ann(required(&a.ann, "ann")?)?;
    let snn = load_snn(required(&a.snn, "snn")?)?;
    let data = load_data(ctx, &a.data)?;
    let calib = a.thresholds.as_deref().map(load_thresholds).transpose()?;
    if calib.is_some() {
        a.grid_points.get_or_insert(33);
    }
    let config = echo(&a);
    announce(ctx, &config);
    let mut report = ConversionReport::build(&ann, &snn, &data, &t_list, Some(ctx.seed), config)?;
    if let Some(calib) = calib {
        let t = *t_list.iter().max().expect("nonempty");
        let grid = even_grid(
            a.grid_points.unwrap_or(33),
            hidden_vth_max(&calib) / t as f64,
        )?;
        report.shift_sweep = shift_sweep(&ann, &calib, &data, t, &grid)?;
    }
    for (t, loss) in &report.conversion_loss_by_t {
        println!(
            "T={t}: snn accuracy {} loss {loss}",
            report.snn_accuracy_by_t[t]
        );
    }
    let value = serde_json::to_value(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_json(&out, &value)?;
    if let Some(path) = &a.layer_csv {
        report.write_layer_csv(path)?;
    }
    if let Some(path) = &a.sweep_csv {
        report.write_sweep_csv(path)?;
    }
    Ok(())
}

fn sweep_cmd(ctx: &Context, mut a: SweepArgs) -> Result<()> {
    let steps = check_steps(*required(&a.steps, "steps")?)?;
    let ann = load_ann(required(&a.model, "model")?)?;
    let calib = load_thresholds(required(&a.thresholds, "thresholds")?)?;
    let data = load_data(ctx, &a.data)?;
    let grid = match &a.grid {
        Some(g) => g.clone(),
        None => {
            let max = *a
                .grid_max
                .get_or_insert(hidden_vth_max(&calib) / steps as f64);
            even_grid(*a.grid_points.get_or_insert(33), max)?
        }
    };
    let config = echo(&a);
    announce(ctx, &config);
    let points = shift_sweep(&ann, &calib, &data, steps, &grid)?;
    let best = points
        .iter()
        .min_by(|p, q| p.objective.total_cmp(&q.objective))
        .expect("nonempty grid");
    println!(
        "objective minimum at delta = {} (v_th/2T = {})",
        best.delta,
        hidden_vth_max(&calib) / (2.0 * steps as f64)
    );
    let body = json!({
        "T": steps,
        "argmin_delta": best.delta,
        "half_step": hidden_vth_max(&calib) / (2.0 * steps as f64),
        "points": points,
    });
    if let Some(path) = &a.csv {
        write_csv(path, &points)?;
    }
    let report = envelope(ctx, "sweep-shift", config, body);
    match &a.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{report}");
            Ok(())
        }
    }
}

fn scaling_cmd(ctx: &Context, a: ScalingArgs) -> Result<()> {
    let t_list = required(&a.t_list, "t-list")?.clone();
    for &t in &t_list {
        check_steps(t)?;
    }
    let ann = load_ann(required(&a.model, "model")?)?;
    let calib = load_thresholds(required(&a.thresholds, "thresholds")?)?;
    let data = load_data(ctx, &a.data)?;
    let config = echo(&a);
    announce(ctx, &config);
    let table = scaling_experiment(&ann, &calib, &data, &t_list)?;
    for row in &table.rows {
        println!(
            "T={}: output error {} estimate {}",
            row.steps, row.mean_output_error, row.estimate
        );
    }
    match table.log_log_slope {
        Some(s) => println!("log-log slope: {s}"),
        None => println!("log-log slope: undefined"),
    }
    if let Some(path) = &a.csv {
        write_csv(path, &table.rows)?;
    }
    let body = serde_json::to_value(&table).map_err(|e| Error::Format(e.to_string()))?;
    let report = envelope(ctx, "scaling", config, body);
    match &a.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{report}");
            Ok(())
        }
    }
}

fn synth_cmd(ctx: &Context, mut a: SynthArgs) -> Result<()> {
    let out_data = required(&a.out_data, "out-data")?.clone();
    let kind = *a.kind.get_or_insert(SynthKind::Uniform);
    let n = *a.n.get_or_insert(4096);
    match kind {
        SynthKind::Uniform => {
            let width = *a.width.get_or_insert(64);
            let v_th = *a.v_th.get_or_insert(1.0);
            let config = echo(&a);
            announce(ctx, &config);
            let (model, data) = synth_uniform_benchmark(n, width, v_th, ctx.seed)?;
            let meta = json!({"format_version": OUTPUT_FORMAT_VERSION, "seed": ctx.seed, "command": "synth", "config": config});
            save_dataset(&data, meta.clone(), &out_data)?;
            if let Some(path) = &a.out_model {
                save_model(&ModelFile::from_ann(&model, meta), path)?;
            }
        }
        SynthKind::Patterns => {
            let defaults = PatternConfig::default();
            let pattern = PatternConfig {
                noise: *a.noise.get_or_insert(defaults.noise),
                ..defaults
            };
            let sample_seed = *a.sample_seed.get_or_insert(ctx.seed);
            if a.out_model.is_some() {
                return Err(Error::Config(
                    "--out-model only applies to --kind uniform".into(),
                ));
            }
            let config = echo(&a);
            announce(ctx, &config);
            let data = PatternTask::new(pattern.clone(), ctx.seed)?.sample(n, sample_seed)?;
            let meta = json!({
                "format_version": OUTPUT_FORMAT_VERSION,
                "seed": ctx.seed,
                "command": "synth",
                "config": config,
                "pattern": pattern,
            });
            save_dataset(&data, meta, &out_data)?;
        }
    }
    Ok(())
}
