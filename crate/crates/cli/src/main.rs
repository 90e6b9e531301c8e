mod calibration_file;
mod features;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use driftbridge::attribution::export_matching;
use driftbridge::calibration::FitKind;
use driftbridge::detector::{fit_detector, DetectorConfig, DEFAULT_P_THRESHOLD};
use driftbridge::harness::{
    corrupt, draw_batch, make_world, roc_csv, run_experiment, run_sweep, DrawMode, ExperimentConfig, SweepConfig,
    WorldConfig,
};
use driftbridge::mmd::{KernelFamily, KernelSpec};
use driftbridge::ot::{partial_wasserstein_with, DEFAULT_DUMMY_MULTIPLIER};
use driftbridge::statistic::{default_alpha, KernelChoice, StatisticKind, StatisticSpec};
use driftbridge::RngSeed;
use serde::Serialize;

use calibration_file::CalibrationFile;
use features::Format;

#[derive(Parser)]
#[command(name = "driftbridge", version, about = "Partial-matching drift detection on feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap the null distribution on a reference file.
    Calibrate(CalibrateArgs),
    /// Score a batch against a calibrated reference.
    Score(ScoreArgs),
    /// Run the synthetic detection experiment.
    Experiment(ExperimentArgs),
    /// Run a one-axis sensitivity sweep of the experiment.
    Sweep(SweepArgs),
    /// Write the partial transport coupling between reference and batch as CSV.
    ExportMatching(ExportArgs),
    /// Write points drawn from the synthetic clustered world.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    SquaredExponential,
    Exponential,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::SquaredExponential => KernelFamily::SquaredExponential,
            KernelArg::Exponential => KernelFamily::Exponential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Gamma,
    Normal,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    /// One of wasserstein, partial-wasserstein, mmd, partial-mmd-two-stage,
    /// partial-mmd-adhoc, partial-mmd-qp.
    #[arg(long)]
    stat: StatisticKind,
    /// Fraction of reference mass to match; defaults to test-size / reference size.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    test_size: usize,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = KernelArg::SquaredExponential)]
    kernel: KernelArg,
    /// Kernel lengthscale; the median heuristic on the reference when omitted.
    #[arg(long)]
    lengthscale: Option<f64>,
    #[arg(long, value_enum, default_value_t = FitArg::Gamma)]
    fit: FitArg,
    #[arg(long, default_value_t = DEFAULT_DUMMY_MULTIPLIER)]
    dummy_multiplier: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    calib: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    batch: PathBuf,
    /// Include per-point attribution.
    #[arg(long)]
    attribute: bool,
    #[arg(long, default_value_t = DEFAULT_P_THRESHOLD)]
    threshold: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write wall-clock timings to runtimes.json.
    #[arg(long)]
    runtimes: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    batch: PathBuf,
    /// Defaults to batch size / reference size.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_DUMMY_MULTIPLIER)]
    dummy_multiplier: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    world_seed: u64,
    /// Draw every point from this class instead of uniformly over classes.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    severity: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the binary DRF1 format instead of CSV.
    #[arg(long)]
    binary: bool,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let (reference, bytes) = features::read(&args.reference)?;
    let alpha = match args.alpha {
        Some(a) => a,
        None if args.stat.is_partial() => default_alpha(args.test_size, reference.n(), 1.0),
        None => 1.0,
    };
    let kernel = match args.lengthscale {
        Some(l) => KernelChoice::Fixed(KernelSpec::new(args.kernel.into(), l)?),
        None => KernelChoice::Auto {
            family: args.kernel.into(),
        },
    };
    let spec = StatisticSpec::new(args.stat, alpha, args.p)?.with_kernel(kernel);
    let mut config = DetectorConfig::new(spec, args.test_size, RngSeed(args.seed)).with_permutations(args.permutations);
    config.dummy_multiplier = args.dummy_multiplier;
    config.fit_kind = match args.fit {
        FitArg::Gamma => FitKind::ShiftedGamma,
        FitArg::Normal => FitKind::Normal,
    };
    let det = fit_detector(config, reference)?;
    let file = CalibrationFile::from_detector(&det, &bytes)?;
    write_file(&args.out, &to_json(&file)?)
}

fn score(args: ScoreArgs) -> Result<()> {
    let calib: CalibrationFile = read_json(&args.calib)?;
    let (reference, ref_bytes) = features::read(&args.reference)?;
    let (batch, _) = features::read(&args.batch)?;
    let det = calib.detector(reference, &ref_bytes, args.threshold)?;
    let report = if args.attribute {
        det.score_batch_with_attribution(&batch)?
    } else {
        det.score_batch(&batch)?
    };
    let json = to_json(&report)?;
    match &args.out {
        Some(path) => write_file(path, &json),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&json)?;
            Ok(())
        }
    }
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg: ExperimentConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    let outcome = run_experiment(&cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("report.json"), &to_json(&outcome.report)?)?;
    for d in &outcome.report.detectors {
        write_file(&args.out.join(format!("roc-{}.csv", d.name)), roc_csv(&d.roc).as_bytes())?;
        eprintln!("{:<24} AUC {:.3}", d.name, d.auc);
    }
    for r in &outcome.runtimes {
        eprintln!(
            "{:<24} calibration {:.2}s, {:.4}s per score",
            r.name, r.calibration_seconds, r.mean_score_seconds
        );
    }
    if args.runtimes {
        write_file(&args.out.join("runtimes.json"), &to_json(&outcome.runtimes)?)?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg: SweepConfig = read_json(&args.config)?;
    let report = run_sweep(&cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("sweep.json"), &to_json(&report)?)?;
    let mut csv = String::from("value,detector,auc\n");
    for point in &report.points {
        for a in &point.aucs {
            csv.push_str(&format!("{},{},{}\n", point.value, a.name, a.auc));
        }
    }
    write_file(&args.out.join("sweep.csv"), csv.as_bytes())
}

fn export(args: ExportArgs) -> Result<()> {
    let (x, _) = features::read(&args.reference)?;
    let (y, _) = features::read(&args.batch)?;
    let alpha = args.alpha.unwrap_or_else(|| default_alpha(y.n(), x.n(), 1.0));
    let result = partial_wasserstein_with(&x, &y, alpha, args.p, args.dummy_multiplier)?;
    let csv = export_matching(&result, &x, &y)?.to_csv();
    match &args.out {
        Some(path) => write_file(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let world = make_world(&WorldConfig {
        classes: args.classes,
        dim: args.dim,
        spread: args.spread,
        seed: RngSeed(args.world_seed),
        ..WorldConfig::default()
    })?;
    let mode = match args.class {
        Some(c) => DrawMode::Imbalanced(c),
        None => DrawMode::Balanced,
    };
    let seed = RngSeed(args.seed);
    let batch = draw_batch(&world, args.n, mode, seed)?;
    let batch = corrupt(&world, &batch, args.severity, seed.derive(1))?;
    let format = if args.binary { Format::Binary } else { Format::Csv };
    write_file(&args.out, &features::encode(&batch, format))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DRIFTBRIDGE_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) => n,
        Err(_) => bail!("DRIFTBRIDGE_THREADS must be a non-negative integer, got {raw:?}"),
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Score(a) => score(a),
        Command::Experiment(a) => experiment(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportMatching(a) => export(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
