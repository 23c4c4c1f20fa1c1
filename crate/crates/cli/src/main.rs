//! `cpnet`: sample meshes, down-sample clouds, train and evaluate CP-Net
//! classifiers, run ablations and time the samplers.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 file system error.
//! Diagnostics and the effective seed go to stderr; stdout carries data only.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use critical_points::bench::{bench_csv, bench_grid, BenchOp};
use critical_points::cpl::{self, CplError, FeatureMatrix, SelectionMode};
use critical_points::cpnet::{
    self, checkpoint_load, checkpoint_save, gen_shapes, metrics_csv, parse_ratio, AblationGrid,
    Checkpoint, CpnetError, Model, RunConfig, ShapeClass, ShapeDataset, Split,
};
use critical_points::pcio::{self, PcioError, PointCloud};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cpnet", version, about = "Critical point down-sampling and CP-Net training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a normalized point cloud from the surface of an OFF mesh.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Down-sample an XYZ cloud with a critical points layer or a baseline.
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        /// Kept fraction: `1/4`, `0.25` or the denominator `4`.
        #[arg(long)]
        ratio: String,
        #[arg(long, value_enum, default_value_t = Mode::Cpl)]
        mode: Mode,
        /// Select on the first-stage features of a trained checkpoint
        /// instead of the raw coordinates.
        #[arg(long)]
        features_from: Option<PathBuf>,
        /// Print the selection diagnostics as JSON on stdout.
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the kept points as a depth-coloured PLY.
        #[arg(long)]
        ply: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a classifier on the synthetic shape set.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a freshly generated shape set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the config's `dataset_seed`, or 0.
        #[arg(long)]
        dataset_seed: Option<u64>,
        /// Run config whose dataset keys describe the shape set.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Seed for the random sampler, if the network uses one.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate every cell of a parameter grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time a sampler over lists of sizes.
    Bench {
        #[arg(long, value_enum)]
        op: Op,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "64")]
        d: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cpl,
    Wcpl,
    Random,
    Fps,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Cpl,
    Fps,
    Knn,
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<PcioError> for CliError {
    fn from(e: PcioError) -> Self {
        match e {
            PcioError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<CpnetError> for CliError {
    fn from(e: CpnetError) -> Self {
        match e {
            CpnetError::Io(io) => CliError::Io(io.to_string()),
            CpnetError::Pcio(p) => p.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<CplError> for CliError {
    fn from(e: CplError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn with_path<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sample { input, n, seed, out } => {
            eprintln!("seed: {seed}");
            if n == 0 {
                return Err(CliError::Invalid("--n must be positive".into()));
            }
            let mesh = with_path(&input, pcio::read_off(&input))?;
            let cloud = pcio::sample_surface(&mesh, n, seed)?;
            let cloud = pcio::normalize_unit_sphere(&cloud)?;
            with_path(&out, pcio::write_xyz(&cloud, &out))
        }
        Command::Downsample {
            input,
            ratio,
            mode,
            features_from,
            explain,
            out,
            ply,
            seed,
        } => {
            eprintln!("seed: {seed}");
            downsample(&input, &ratio, mode, features_from.as_deref(), explain, &out, ply.as_deref(), seed)
        }
        Command::Train { config, out, log } => train(&config, &out, log.as_deref()),
        Command::Eval {
            ckpt,
            dataset_seed,
            config,
            split,
            seed,
        } => eval(&ckpt, dataset_seed, config.as_deref(), split, seed),
        Command::Ablate { grid, out } => {
            let grid = AblationGrid::from_text(&read_text(&grid)?)?;
            let seeds: Vec<String> = grid.seeds.iter().map(u64::to_string).collect();
            eprintln!("seed: {} (dataset {})", seeds.join(","), grid.base.data.seed);
            let rows = cpnet::ablate(&grid)?;
            write_text(&out, &cpnet::ablation_csv(&rows))
        }
        Command::Bench { op, n, d, reps, seed, out } => {
            eprintln!("seed: {seed}");
            if reps == 0 {
                return Err(CliError::Invalid("--reps must be positive".into()));
            }
            let op = match op {
                Op::Cpl => BenchOp::Cpl,
                Op::Fps => BenchOp::Fps,
                Op::Knn => BenchOp::Knn,
            };
            let rows = bench_grid(op, &n, &d, reps, seed).map_err(CliError::Invalid)?;
            let csv = bench_csv(&rows);
            match out {
                Some(path) => write_text(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn downsample(
    input: &Path,
    ratio: &str,
    mode: Mode,
    features_from: Option<&Path>,
    explain: bool,
    out: &Path,
    ply: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let cloud = with_path(input, pcio::read_xyz(input))?;
    let denom = parse_ratio(ratio)?;
    let n = cloud.len();
    let k = ((n as f64 / denom as f64).round() as usize).max(1);

    let (indices, explanation) = match mode {
        Mode::Cpl | Mode::Wcpl => {
            let features = match features_from {
                Some(path) => {
                    let ckpt = with_path(path, checkpoint_load(path))?;
                    ckpt.model()?.selection_features(&cloud.points)?
                }
                None => FeatureMatrix::new(n, 3, cloud.points.iter().flatten().copied().collect())?,
            };
            let selection_mode = match mode {
                Mode::Cpl => SelectionMode::Cpl,
                _ => SelectionMode::Wcpl,
            };
            let sel = cpl::cpl_select(features.view(), k, selection_mode)?;
            let json = serde_json::to_value(&sel).expect("selection serializes");
            (sel.resized, json)
        }
        Mode::Random => {
            let idx = cpl::downsample_random(n, k, seed)?;
            let json = json!({ "mode": "RANDOM", "resized": idx });
            (idx, json)
        }
        Mode::Fps => {
            let idx = cpl::downsample_fps(&cloud.points, k)?;
            let json = json!({ "mode": "FPS", "resized": idx });
            (idx, json)
        }
    };
    if features_from.is_some() && matches!(mode, Mode::Random | Mode::Fps) {
        eprintln!("note: --features-from only affects cpl and wcpl");
    }

    let small: PointCloud = cloud.select(&indices);
    with_path(out, pcio::write_xyz(&small, out))?;
    if let Some(path) = ply {
        with_path(path, pcio::write_ply_depth_colored(&small, path))?;
    }
    if explain {
        println!("{explanation}");
    }
    eprintln!("kept {} of {n} points", indices.len());
    Ok(())
}

fn train(config: &Path, out: &Path, log: Option<&Path>) -> Result<(), CliError> {
    let run = with_path(config, RunConfig::from_text(&read_text(config)?))?;
    eprintln!(
        "seed: {} (weights {}, dataset {})",
        run.train.seed, run.network.seed, run.data.seed
    );
    let train_set = gen_shapes(&run.data, Split::Train)?;
    let test_set = gen_shapes(&run.data, Split::Test)?;
    let mut model = Model::build_cascade(run.network.clone())?;
    let outcome = cpnet::train(&mut model, &train_set, &test_set, &run.train)?;
    let ckpt = Checkpoint::new(&model, &outcome.optimizer, outcome.epochs as u64);
    with_path(out, checkpoint_save(&ckpt, out))?;
    if let Some(path) = log {
        write_text(path, &metrics_csv(&outcome.log))?;
    }
    for m in &outcome.log {
        eprintln!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  class acc {:.4}",
            m.epoch, m.loss, m.overall_acc, m.mean_class_acc
        );
    }
    Ok(())
}

fn eval(ckpt: &Path, dataset_seed: Option<u64>, config: Option<&Path>, split: SplitArg, seed: u64) -> Result<(), CliError> {
    let checkpoint = with_path(ckpt, checkpoint_load(ckpt))?;
    let model = checkpoint.model()?;
    let classes = model.config().classes;
    let mut data = match config {
        Some(path) => with_path(path, RunConfig::from_text(&read_text(path)?))?.data,
        None => {
            if classes > ShapeClass::ALL.len() {
                return Err(CliError::Invalid(format!(
                    "checkpoint has {classes} classes but only {} shapes exist",
                    ShapeClass::ALL.len()
                )));
            }
            ShapeDataset {
                classes: ShapeClass::ALL[..classes].to_vec(),
                ..Default::default()
            }
        }
    };
    if data.classes.len() != classes {
        return Err(CliError::Invalid(format!(
            "dataset has {} classes, checkpoint expects {classes}",
            data.classes.len()
        )));
    }
    data.points = model.config().input_points;
    if let Some(s) = dataset_seed {
        data.seed = s;
    }
    eprintln!("seed: {seed} (dataset {})", data.seed);
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let clouds = gen_shapes(&data, split)?;
    let report = cpnet::evaluate(&model, &clouds, seed)?;
    let out = json!({
        "overall_acc": report.overall_acc,
        "mean_class_acc": report.mean_class_acc,
        "confusion": report.confusion,
    });
    println!("{out}");
    Ok(())
}
