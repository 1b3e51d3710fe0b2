//! Config-driven comparisons of decoders over many examples.
//!
//! A comparison preprocesses every example once, trains every architecture on
//! it, predicts the untouched test trials and writes a self-contained package
//! whose aggregates can be recomputed from its per-run records.

pub mod config;
pub mod package;
pub mod report;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architectures::{self, ArchitectureId};
use crate::eegdata::{generate_synthetic, load_recording};
use crate::preprocess::{run_pipeline, PipelineOutput};
use crate::stats::{self, StatsError};
use crate::tensornn::io::{encode_state, model_meta};
use crate::training::{self, PredictionRecord};

pub use config::{
    data_seed, permutation_seed, run_seed, sha256_hex, ComparisonConfig, DatasetConfig, DatasetSource,
    StatsParams, TrainingOverride,
};
pub use package::{
    aggregate, render_stats, Aggregates, PairStats, RunData, RunRecord, RunStatus, CONFIG_FILE,
    PROVENANCE_FILE, RESULTS_FILE,
};
pub use report::{emit_report, ReportFormat};
pub use verify::{verify_package, VerifyOptions, VerifyReport};

pub const TOOL_NAME: &str = "eegbench";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("output directory {0} is not empty")]
    OutputNotEmpty(PathBuf),
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
    #[error("package: {0}")]
    Package(String),
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub example: String,
    pub architecture: ArchitectureId,
    pub seed: u64,
    pub status: RunStatus,
    pub accuracy: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

/// Index of a package: status, run list and a digest of every payload file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub tool: ToolInfo,
    pub config_hash: String,
    pub status: PackageStatus,
    pub n_runs: usize,
    pub n_failed: usize,
    pub runs: Vec<RunSummary>,
    /// sha256 of each file under `runs/` and `stats/`.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ResultsPackage {
    pub dir: PathBuf,
    pub index: ResultsIndex,
    pub runs: Vec<RunData>,
    pub aggregates: Aggregates,
}

/// Loads or generates an example's recording and runs the preprocessing pipeline.
pub fn prepare_example(cfg: &ComparisonConfig, d: &DatasetConfig) -> std::result::Result<PipelineOutput, String> {
    let rec = match &d.source {
        DatasetSource::Synthetic { spec, seed } => {
            generate_synthetic(spec, seed.unwrap_or_else(|| data_seed(cfg.master_seed, &d.id)))
        }
        DatasetSource::Path(p) => load_recording(Path::new(p)),
    }
    .map_err(|e| format!("loading data: {e}"))?;
    run_pipeline(&rec, &d.window, d.n_classes, &cfg.preprocess, &cfg.cleaning)
        .map_err(|e| format!("preprocessing: {e}"))
}

/// Output of one run: its data plus the files to write under its directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub data: RunData,
    pub files: Vec<(String, Vec<u8>)>,
}

fn failed_run(cfg: &ComparisonConfig, d: &DatasetConfig, arch: ArchitectureId, error: String) -> RunArtifacts {
    log::warn!("run {}/{} failed: {error}", d.id, arch);
    let record = base_record(cfg, d, arch, RunStatus::Failed, Some(error));
    let json = package::json_bytes(&record);
    RunArtifacts {
        files: vec![(format!("{}/run.json", record.dir()), json)],
        data: RunData {
            record,
            predictions: None,
        },
    }
}

fn base_record(
    cfg: &ComparisonConfig,
    d: &DatasetConfig,
    arch: ArchitectureId,
    status: RunStatus,
    error: Option<String>,
) -> RunRecord {
    let seed = run_seed(cfg.master_seed, &d.id, arch);
    RunRecord {
        example: d.id.clone(),
        dataset: d.group().to_string(),
        architecture: arch,
        seed,
        permutation_seed: permutation_seed(cfg.master_seed, &d.id, arch),
        status,
        error,
        accuracy: None,
        per_class_accuracy: None,
        absent_classes: Vec::new(),
        p_value: None,
        permutation: None,
        param_count: None,
        n_channels: None,
        n_times: None,
        n_train_trials: None,
        n_test_trials: None,
        final_loss: None,
        hyperparameters: cfg.training_for(arch).with_seed(seed),
        preprocessing: None,
    }
}

/// Trains, predicts and scores one architecture on a preprocessed example.
pub fn execute_run(
    cfg: &ComparisonConfig,
    d: &DatasetConfig,
    prepared: &std::result::Result<PipelineOutput, String>,
    arch: ArchitectureId,
) -> RunArtifacts {
    let out = match prepared {
        Ok(o) => o,
        Err(e) => return failed_run(cfg, d, arch, e.clone()),
    };
    match try_run(cfg, d, out, arch) {
        Ok(a) => a,
        Err(e) => failed_run(cfg, d, arch, e),
    }
}

fn try_run(
    cfg: &ComparisonConfig,
    d: &DatasetConfig,
    out: &PipelineOutput,
    arch: ArchitectureId,
) -> std::result::Result<RunArtifacts, String> {
    let mut record = base_record(cfg, d, arch, RunStatus::Ok, None);
    let (c, t) = (out.train.n_channels(), out.train.n_times());
    let net = architectures::build(arch, c, t, d.n_classes, record.seed).map_err(|e| e.to_string())?;
    let model = training::train(net, &out.train, &record.hyperparameters, Some(arch)).map_err(|e| e.to_string())?;
    let preds = training::predict(&model, &out.test).map_err(|e| e.to_string())?;
    let acc = training::evaluate(&preds).map_err(|e| e.to_string())?;
    let perm = stats::permutation_test_with_cap(
        &preds.predicted,
        &preds.labels,
        d.n_classes,
        cfg.stats.n_perm,
        record.permutation_seed,
        cfg.stats.enumeration_cap,
    )
    .map_err(|e| format!("permutation test: {e}"))?;
    log::info!("run {}/{arch}: accuracy {} p {}", d.id, acc.mean, perm.p_value);

    record.accuracy = Some(acc.mean);
    record.per_class_accuracy = Some(acc.per_class);
    record.absent_classes = acc.absent_classes;
    record.p_value = Some(perm.p_value);
    record.permutation = Some(perm);
    record.param_count = Some(model.net.param_count());
    record.n_channels = Some(c);
    record.n_times = Some(t);
    record.n_train_trials = Some(out.train.n_trials());
    record.n_test_trials = Some(out.test.n_trials());
    record.final_loss = model.history.last().map(|h| h.loss);
    record.preprocessing = Some(out.provenance.clone());

    let dir = record.dir();
    let info = serde_json::json!({
        "architecture": arch,
        "example": d.id,
        "seed": record.seed,
    });
    let meta = package::json_bytes(&model_meta(&model.net, info));
    let files = vec![
        (format!("{dir}/model.bin"), encode_state(&model.net.state())),
        (format!("{dir}/model.meta.json"), meta),
        (format!("{dir}/history.csv"), package::render_history(&model.history).into_bytes()),
        (format!("{dir}/predictions.csv"), package::render_predictions(&preds).into_bytes()),
        (format!("{dir}/run.json"), package::json_bytes(&record)),
    ];
    Ok(RunArtifacts {
        data: RunData {
            record,
            predictions: Some(preds),
        },
        files,
    })
}

/// Runs every (example, architecture) pair of `cfg`.
pub fn run_all(cfg: &ComparisonConfig) -> Result<Vec<RunArtifacts>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let mut datasets: Vec<&DatasetConfig> = cfg.datasets.iter().collect();
    datasets.sort_by(|a, b| a.id.cmp(&b.id));
    let mut archs = cfg.architectures.clone();
    archs.sort();
    Ok(pool.install(|| {
        let prepared: Vec<_> = datasets.par_iter().map(|d| prepare_example(cfg, d)).collect();
        let tasks: Vec<(usize, ArchitectureId)> = (0..datasets.len())
            .flat_map(|i| archs.iter().map(move |&a| (i, a)))
            .collect();
        tasks
            .par_iter()
            .map(|&(i, a)| execute_run(cfg, datasets[i], &prepared[i], a))
            .collect()
    }))
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(true);
    }
    Ok(fs::read_dir(dir)?.next().is_none())
}

/// Runs the comparison and writes its package to `out`.
///
/// Failed runs are recorded and the package marked partial; an error is
/// returned only when no run succeeds.
pub fn run_comparison(cfg: &ComparisonConfig, out: &Path) -> Result<ResultsPackage> {
    cfg.validate()?;
    if !is_empty_dir(out)? {
        return Err(HarnessError::OutputNotEmpty(out.to_path_buf()));
    }
    let started = SystemTime::now();
    fs::create_dir_all(out)?;
    let resolved = cfg.resolved_json();
    package::write_file(out, CONFIG_FILE, resolved.as_bytes())?;

    let artifacts = run_all(cfg)?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for a in &artifacts {
        for (rel, bytes) in &a.files {
            files.insert(rel.clone(), bytes.clone());
        }
    }
    let runs: Vec<RunData> = artifacts.into_iter().map(|a| a.data).collect();
    let n_failed = runs.iter().filter(|r| !r.record.is_ok()).count();
    let aggregates = aggregate(&runs, &cfg.architectures, cfg.stats.alpha, cfg.stats.per_dataset_sign_test)?;
    files.extend(render_stats(&aggregates));
    for (rel, bytes) in &files {
        package::write_file(out, rel, bytes)?;
    }

    let status = match n_failed {
        0 => PackageStatus::Complete,
        n if n == runs.len() => PackageStatus::Failed,
        _ => PackageStatus::Partial,
    };
    let index = ResultsIndex {
        tool: ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        },
        config_hash: sha256_hex(resolved.as_bytes()),
        status,
        n_runs: runs.len(),
        n_failed,
        runs: runs
            .iter()
            .map(|r| RunSummary {
                example: r.record.example.clone(),
                architecture: r.record.architecture,
                seed: r.record.seed,
                status: r.record.status,
                accuracy: r.record.accuracy,
                p_value: r.record.p_value,
                error: r.record.error.clone(),
            })
            .collect(),
        files: files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
    };
    package::write_file(out, RESULTS_FILE, &package::json_bytes(&index))?;
    report::emit_report(out, ReportFormat::Csv)?;
    report::emit_report(out, ReportFormat::Json)?;
    write_provenance(out, cfg, started)?;

    if status == PackageStatus::Failed {
        return Err(HarnessError::AllRunsFailed(runs.len()));
    }
    Ok(ResultsPackage {
        dir: out.to_path_buf(),
        index,
        runs,
        aggregates,
    })
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_provenance(out: &Path, cfg: &ComparisonConfig, started: SystemTime) -> Result<()> {
    let prov = serde_json::json!({
        "started_unix_s": unix_seconds(started),
        "finished_unix_s": unix_seconds(SystemTime::now()),
        "workers": cfg.workers,
        "output_dir": out.display().to_string(),
        "host": std::env::var("HOSTNAME").ok(),
        "tool_version": TOOL_VERSION,
    });
    package::write_file(out, PROVENANCE_FILE, &package::json_bytes(&prov))
}

/// Reads every run record and prediction file of a package.
///
/// Unreadable files are returned as `(path, problem)` pairs.
pub fn load_runs(dir: &Path, index: &ResultsIndex) -> (Vec<RunData>, Vec<(String, String)>) {
    let mut runs = Vec::new();
    let mut problems = Vec::new();
    for s in &index.runs {
        let rd = package::run_dir(&s.example, s.architecture);
        let run_file = format!("{rd}/run.json");
        let record: RunRecord = match package::read_json(dir, &run_file) {
            Ok(r) => r,
            Err(e) => {
                problems.push((run_file, e.to_string()));
                continue;
            }
        };
        let mut predictions: Option<PredictionRecord> = None;
        if record.is_ok() {
            let file = format!("{rd}/predictions.csv");
            match package::read_text(dir, &file)
                .map_err(|e| e.to_string())
                .and_then(|t| package::parse_predictions(&t))
            {
                Ok(p) => predictions = Some(p),
                Err(e) => problems.push((file, e)),
            }
        }
        runs.push(RunData { record, predictions });
    }
    (runs, problems)
}
