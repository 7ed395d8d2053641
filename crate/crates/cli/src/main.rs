//! `cutassess`: synthesize, window, train, evaluate, compare, retrain and score.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cutassess::assessment::{evaluate, score_trajectory, ConfusionMatrix};
use cutassess::baselines::{compare, BaselineConfig};
use cutassess::nn::{Architecture, CnnModel};
use cutassess::synthgen::{generate, SynthConfig};
use cutassess::training::{
    load_model_with_meta, prepare_dataset, reduce_train, retrain_transfer, save_model, train, window_dataset,
    SplitDataset, SplitLevel, TrainConfig, TrainHistory, TrainMeta,
};
use cutassess::trajectory::{load_dataset, parse_trajectory, write_atomic, write_windows, DEFAULT_WINDOW_LEN};

#[derive(Parser, Debug)]
#[command(name = "cutassess", version, about = "Cutting-skill assessment from tool trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Window a dataset into a single windows file.
    Augment(AugmentArgs),
    /// Train the CNN.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a model on a test split.
    Eval(EvalArgs),
    /// Logistic regression, KNN and SVM on the same split.
    Baselines(BaselinesArgs),
    /// Retrain the later blocks of a model on new data.
    Retrain(RetrainArgs),
    /// Score one recording.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Manifest; defaults to DIR/labels.csv.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.70,0.15,0.15", value_parser = parse_split)]
    split: [f64; 3],
    #[arg(long, value_enum, default_value_t = Level::Trajectory)]
    split_level: Level,
    /// 2 and 3 merge neighbouring quality classes into bands.
    #[arg(long, default_value_t = 6, value_parser = parse_classes)]
    classes: usize,
}

#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    lr: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Trajectory,
    Window,
}

impl From<Level> for SplitLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Trajectory => SplitLevel::Trajectory,
            Level::Window => SplitLevel::Window,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nominal segment length in meters.
    #[arg(long)]
    base_length: Option<f64>,
    /// Rotation of the whole scene as `qx,qy,qz,qw`.
    #[arg(long, value_parser = parse_quaternion, allow_hyphen_values = true)]
    frame_rotation: Option<[f64; 4]>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    window: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history to write.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0.70,0.15,0.15", value_parser = parse_split)]
    split: [f64; 3],
    #[arg(long, value_enum, default_value_t = Level::Trajectory)]
    split_level: Level,
    /// Defaults to the seed stored in the model file.
    #[arg(long)]
    seed: Option<u64>,
    /// Confusion matrix CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselinesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    window: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report this CNN on the same test split.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comparison CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    /// Model to start from.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(0..=4))]
    freeze_blocks: u64,
    /// Share of the training split to use.
    #[arg(long, default_value_t = 1.0)]
    train_fraction: f64,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value = "0.70,0.15,0.15", value_parser = parse_split)]
    split: [f64; 3],
    #[arg(long, value_enum, default_value_t = Level::Trajectory)]
    split_level: Level,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON to write instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let ratios: [f64; 3] = parts
        .try_into()
        .map_err(|_| "expected three comma-separated fractions".to_string())?;
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err("fractions must be positive and sum to 1".into());
    }
    Ok(ratios)
}

fn parse_classes(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(c @ (2 | 3 | 6)) => Ok(c),
        _ => Err("must be 2, 3 or 6".into()),
    }
}

fn parse_quaternion(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let q: [f64; 4] = parts.try_into().map_err(|_| "expected qx,qy,qz,qw".to_string())?;
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-9) {
        return Err("quaternion must be non-zero".into());
    }
    Ok(q.map(|v| v / n))
}

/// Flag checks clap cannot express; all run before any file is touched.
fn validate(cmd: &Command) -> Result<(), String> {
    let positive_window = |w: usize| if w == 0 { Err("--window must be at least 1".to_string()) } else { Ok(()) };
    let optim = |o: &OptimArgs| {
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(format!("--lr must be a non-negative number, got {}", o.lr));
        }
        Ok(())
    };
    match cmd {
        Command::Synth(a) => {
            if let Some(l) = a.base_length {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(format!("--base-length must be positive, got {l}"));
                }
            }
            Ok(())
        }
        Command::Augment(a) => positive_window(a.window),
        Command::Train(a) => {
            positive_window(a.window)?;
            optim(&a.optim)
        }
        Command::Baselines(a) => positive_window(a.window),
        Command::Retrain(a) => {
            optim(&a.optim)?;
            if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
                return Err(format!("--train-fraction must lie in (0, 1], got {}", a.train_fraction));
            }
            Ok(())
        }
        Command::Eval(_) | Command::Score(_) => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load(data: &DataArgs) -> Result<Vec<cutassess::trajectory::RawTrajectory>> {
    load_dataset(&data.data, data.labels.as_deref()).with_context(|| format!("loading dataset {}", data.data.display()))
}

fn train_config(o: &OptimArgs, split: [f64; 3], seed: u64, freeze: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: o.lr,
        epochs: o.epochs,
        batch_size: o.batch as usize,
        split_ratios: split,
        seed,
        freeze_blocks: freeze,
        ..TrainConfig::default()
    }
}

#[derive(Serialize)]
struct TrainSummary {
    train_windows: usize,
    val_windows: usize,
    test_windows: usize,
    best_epoch: usize,
    best_val_acc: f64,
    test_acc: f64,
}

fn summarize(model: &CnnModel, data: &SplitDataset, history: &TrainHistory) -> Result<TrainSummary> {
    let test_acc = if data.test.is_empty() { 0.0 } else { evaluate(model, &data.test)?.0 };
    Ok(TrainSummary {
        train_windows: data.train.len(),
        val_windows: data.val.len(),
        test_windows: data.test.len(),
        best_epoch: history.best_epoch,
        best_val_acc: history.best_val_acc,
        test_acc,
    })
}

fn meta(seed: u64, history: &TrainHistory) -> TrainMeta {
    TrainMeta {
        seed,
        epochs_run: history.epochs.len(),
        best_val_acc: history.best_val_acc,
    }
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        per_class: a.per_class as usize,
        seed: a.seed,
        base_length: a.base_length.unwrap_or(defaults.base_length),
        frame_rotation: a.frame_rotation.unwrap_or(defaults.frame_rotation),
        ..defaults
    };
    let written = generate(&cfg, &a.out).with_context(|| format!("writing dataset {}", a.out.display()))?;
    eprintln!("wrote {} trajectories to {}", written.len(), a.out.display());
    Ok(())
}

fn run_augment(a: AugmentArgs) -> Result<()> {
    let trajectories = load(&a.data)?;
    let windows = window_dataset(&trajectories, a.window, 6, a.seed)?;
    write_windows(&windows, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} windows to {}", windows.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let trajectories = load(&a.data)?;
    let data = prepare_dataset(
        &trajectories,
        a.window,
        a.split.classes,
        a.split.split,
        a.seed,
        a.split.split_level.into(),
    )?;
    let arch = Architecture {
        input_len: a.window,
        num_classes: a.split.classes,
        ..Architecture::default()
    };
    let cfg = train_config(&a.optim, a.split.split, a.seed, 0);
    let (model, history) = train(CnnModel::new(arch, a.seed)?, &data, &cfg)?;
    save_model(&model, &a.out, Some(&meta(a.seed, &history)))?;
    if let Some(path) = &a.metrics {
        write_json(path, &history)?;
    }
    print_json(&summarize(&model, &data, &history)?)
}

#[derive(Serialize)]
struct EvalReport {
    classes: usize,
    test_windows: usize,
    accuracy: f64,
    confusion: ConfusionMatrix,
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let (model, meta) = load_model_with_meta(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let seed = a.seed.or(meta.map(|m| m.seed)).unwrap_or(0);
    let trajectories = load(&a.data)?;
    let arch = model.arch();
    let data = prepare_dataset(
        &trajectories,
        arch.input_len,
        arch.num_classes,
        a.split,
        seed,
        a.split_level.into(),
    )?;
    let (accuracy, confusion) = evaluate(&model, &data.test)?;
    if let Some(path) = &a.out {
        write_atomic(path, confusion.to_csv().as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&EvalReport {
        classes: arch.num_classes,
        test_windows: data.test.len(),
        accuracy,
        confusion,
    })
}

struct BaselineRow {
    model: String,
    classes: usize,
    accuracy: f64,
}

fn rows_to_csv(rows: &[BaselineRow]) -> String {
    let mut out = String::from("model,classes,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.model, r.classes, r.accuracy));
    }
    out
}

fn run_baselines(a: BaselinesArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => {
            let (m, _) = load_model_with_meta(p).with_context(|| format!("loading {}", p.display()))?;
            if m.num_classes() != a.split.classes || m.arch().input_len != a.window {
                bail!(
                    "{} expects {} classes and window {}, run uses {} and {}",
                    p.display(),
                    m.num_classes(),
                    m.arch().input_len,
                    a.split.classes,
                    a.window
                );
            }
            Some(m)
        }
        None => None,
    };
    let trajectories = load(&a.data)?;
    let data = prepare_dataset(
        &trajectories,
        a.window,
        a.split.classes,
        a.split.split,
        a.seed,
        a.split.split_level.into(),
    )?;
    let mut rows: Vec<BaselineRow> = compare(&data, &BaselineConfig::default())?
        .into_iter()
        .map(|r| BaselineRow {
            model: r.model,
            classes: r.classes,
            accuracy: r.accuracy,
        })
        .collect();
    if let Some(m) = &model {
        rows.push(BaselineRow {
            model: "cnn".into(),
            classes: a.split.classes,
            accuracy: evaluate(m, &data.test)?.0,
        });
    }
    let csv = rows_to_csv(&rows);
    if let Some(path) = &a.out {
        write_atomic(path, csv.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{csv}");
    Ok(())
}

fn run_retrain(a: RetrainArgs) -> Result<()> {
    let (model, _) = load_model_with_meta(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let trajectories = load(&a.data)?;
    let arch = model.arch().clone();
    let level: SplitLevel = a.split_level.into();
    let data = prepare_dataset(&trajectories, arch.input_len, arch.num_classes, a.split, a.seed, level)?;
    let data = reduce_train(data, a.train_fraction, level)?;
    let cfg = train_config(&a.optim, a.split, a.seed, a.freeze_blocks as usize);
    let (model, history) = retrain_transfer(model, &data, &cfg)?;
    save_model(&model, &a.out, Some(&meta(a.seed, &history)))?;
    if let Some(path) = &a.metrics {
        write_json(path, &history)?;
    }
    print_json(&summarize(&model, &data, &history)?)
}

fn run_score(a: ScoreArgs) -> Result<()> {
    let (model, _) = load_model_with_meta(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let trajectory = parse_trajectory(&a.trajectory).with_context(|| format!("reading {}", a.trajectory.display()))?;
    let start = Instant::now();
    let report = score_trajectory(&model, &trajectory, a.seed)?;
    eprintln!("scored {} windows in {:.3} ms", report.window_count(), start.elapsed().as_secs_f64() * 1e3);
    match &a.out {
        Some(path) => write_json(path, &report),
        None => print_json(&report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = validate(&cli.command) {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Augment(a) => run_augment(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Baselines(a) => run_baselines(a),
        Command::Retrain(a) => run_retrain(a),
        Command::Score(a) => run_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
