use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};
use serde_json::json;

use eegbench::eegdata::{generate_synthetic, save_recording, SyntheticSpec};
use eegbench::harness::package::{parse_predictions, read_text};
use eegbench::harness::{
    emit_report, run_comparison, verify_package, ComparisonConfig, HarnessError, PackageStatus, ReportFormat,
    VerifyOptions,
};
use eegbench::stats::{self, AccuracyMatrix};
use eegbench::training::PredictionRecord;

const EXIT_PARTIAL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "eegbench", version, about = "Reproducible comparisons of EEG decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic recording described by a JSON spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Execute a comparison and write its package.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the worker count from the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Emit plot-ready report files into a package.
    Report {
        #[arg(long)]
        package: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Recompute a package's aggregates and compare with the stored ones.
    Verify {
        #[arg(long)]
        package: PathBuf,
        /// Also retrain every run and compare the run files.
        #[arg(long)]
        retrain: bool,
        /// Print the verification report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Individual statistics on prediction files; results go to stdout as JSON.
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Class-mean accuracy of a predictions file.
    Accuracy {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        n_classes: Option<usize>,
    },
    /// Label-permutation test of a predictions file.
    Permutation {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        n_classes: Option<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        n_perm: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enumerate exactly when the number of arrangements is at most this.
        #[arg(long, default_value_t = stats::DEFAULT_ENUMERATION_CAP)]
        cap: u64,
    },
    /// Two-sided sign test on paired accuracy lists (comma separated).
    SignTest {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
    },
    /// Joint correctness of two predictions files over the same trials.
    Overlap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Divide each row of an accuracy CSV (examples x methods) by its mean.
    Normalize {
        #[arg(long)]
        matrix: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Internal(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::OutputNotEmpty(_) | HarnessError::UnknownFormat(_) => {
                Failure::Invalid(e.to_string())
            }
            other => Failure::Internal(other.to_string()),
        }
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen { spec, out, seed } => gen(&spec, &out, seed),
        Command::Run { config, out, workers } => run(&config, out, workers),
        Command::Report { package, format } => report(&package, &format),
        Command::Verify { package, retrain, json } => verify(&package, retrain, json),
        Command::Stats(cmd) => run_stats(cmd),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Invalid(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Internal(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn gen(spec_path: &Path, out: &Path, seed: u64) -> CliResult {
    let spec: SyntheticSpec = serde_json::from_str(&read_file(spec_path)?)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", spec_path.display())))?;
    spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
    let rec = generate_synthetic(&spec, seed).map_err(|e| Failure::Internal(e.to_string()))?;
    save_recording(&rec, out).map_err(|e| Failure::Internal(e.to_string()))?;
    info!(
        "wrote {} channels x {} samples, {} events to {}",
        rec.n_channels(),
        rec.n_samples(),
        rec.events.len(),
        out.display()
    );
    Ok(0)
}

fn run(config: &Path, out: Option<PathBuf>, workers: Option<usize>) -> CliResult {
    let mut cfg = ComparisonConfig::load(config)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(Failure::Invalid("--workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    let out = out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::Invalid("no output directory: pass --out or set output_dir".into()))?;
    let pkg = run_comparison(&cfg, &out)?;
    let idx = &pkg.index;
    info!("{} runs, {} failed, package at {}", idx.n_runs, idx.n_failed, out.display());
    Ok(match idx.status {
        PackageStatus::Complete => 0,
        PackageStatus::Partial => {
            warn!("package is partial");
            EXIT_PARTIAL
        }
        PackageStatus::Failed => EXIT_INTERNAL,
    })
}

fn report(package: &Path, format: &str) -> CliResult {
    let format: ReportFormat = format.parse()?;
    for p in emit_report(package, format)? {
        println!("{}", p.display());
    }
    Ok(0)
}

fn verify(package: &Path, retrain: bool, as_json: bool) -> CliResult {
    let rep = verify_package(package, VerifyOptions { retrain })?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
    } else {
        print!("{rep}");
    }
    Ok(if rep.passed { 0 } else { EXIT_PARTIAL })
}

fn load_predictions(path: &Path) -> Result<PredictionRecord, Failure> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let text = read_text(dir, name)?;
    parse_predictions(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn stats_err(e: stats::StatsError) -> Failure {
    Failure::Invalid(e.to_string())
}

fn print_json(v: serde_json::Value) -> CliResult {
    println!("{}", serde_json::to_string_pretty(&v).expect("value serializes"));
    Ok(0)
}

fn run_stats(cmd: StatsCommand) -> CliResult {
    match cmd {
        StatsCommand::Accuracy { predictions, n_classes } => {
            let p = load_predictions(&predictions)?;
            let k = n_classes.unwrap_or(p.n_classes());
            let acc = stats::class_accuracies(&p.predicted, &p.labels, k).map_err(stats_err)?;
            print_json(json!(acc))
        }
        StatsCommand::Permutation {
            predictions,
            n_classes,
            n_perm,
            seed,
            cap,
        } => {
            let p = load_predictions(&predictions)?;
            let k = n_classes.unwrap_or(p.n_classes());
            let r = stats::permutation_test_with_cap(&p.predicted, &p.labels, k, n_perm, seed, cap).map_err(stats_err)?;
            print_json(json!(r))
        }
        StatsCommand::SignTest { a, b } => {
            let r = stats::sign_test(&a, &b).map_err(stats_err)?;
            print_json(json!(r))
        }
        StatsCommand::Overlap { a, b } => {
            let (pa, pb) = (load_predictions(&a)?, load_predictions(&b)?);
            if pa.labels != pb.labels {
                return Err(Failure::Invalid("the two files have different labels".into()));
            }
            let o = stats::prediction_overlap(&pa.predicted, &pb.predicted, &pa.labels).map_err(stats_err)?;
            print_json(json!({ "overlap": o, "disagreement": o.disagreement() }))
        }
        StatsCommand::Normalize { matrix } => {
            let text = read_file(&matrix)?;
            let mut rows = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let row = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| Failure::Invalid(format!("line {}: {e}", i + 1)))?;
                rows.push(row);
            }
            let n_methods = rows.first().map_or(0, Vec::len);
            let m = AccuracyMatrix {
                examples: (0..rows.len()).map(|i| i.to_string()).collect(),
                methods: (0..n_methods).map(|j| j.to_string()).collect(),
                p_value: rows.iter().map(|r| vec![1.0; r.len()]).collect(),
                accuracy: rows,
            };
            let norm = stats::normalize_accuracies(&m).map_err(stats_err)?;
            print_json(json!(norm))
        }
    }
}
