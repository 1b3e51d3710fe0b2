//! Package records, file rendering and parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::architectures::ArchitectureId;
use crate::preprocess::Provenance;
use crate::stats::{
    self, AccuracyMatrix, OverlapMatrix, PermutationResult, SignTest,
};
use crate::training::{EpochRecord, Hyperparameters, PredictionRecord};

use super::{HarnessError, Result};

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const RESULTS_FILE: &str = "results.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const RUNS_DIR: &str = "runs";
pub const STATS_DIR: &str = "stats";
pub const REPORT_DIR: &str = "report";

pub const ACCURACY_MATRIX_FILE: &str = "stats/accuracy_matrix.csv";
pub const NORMALIZED_FILE: &str = "stats/normalized.csv";
pub const PAIRWISE_FILE: &str = "stats/pairwise.json";
pub const EXCLUDED_FILE: &str = "stats/excluded.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Everything recorded about one (example, architecture) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub example: String,
    pub dataset: String,
    pub architecture: ArchitectureId,
    pub seed: u64,
    pub permutation_seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Option<Vec<Option<f64>>>,
    pub absent_classes: Vec<usize>,
    pub p_value: Option<f64>,
    pub permutation: Option<PermutationResult>,
    pub param_count: Option<usize>,
    pub n_channels: Option<usize>,
    pub n_times: Option<usize>,
    pub n_train_trials: Option<usize>,
    pub n_test_trials: Option<usize>,
    pub final_loss: Option<f64>,
    pub hyperparameters: Hyperparameters,
    pub preprocessing: Option<Provenance>,
}

impl RunRecord {
    pub fn dir(&self) -> String {
        run_dir(&self.example, self.architecture)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

pub fn run_dir(example: &str, arch: ArchitectureId) -> String {
    format!("{RUNS_DIR}/{example}/{}", arch.name())
}

/// A run record with its test-set predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub record: RunRecord,
    pub predictions: Option<PredictionRecord>,
}

pub fn render_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,train_accuracy\n");
    for h in history {
        let _ = writeln!(s, "{},{},{}", h.epoch, h.loss, h.train_accuracy);
    }
    s
}

pub fn render_predictions(p: &PredictionRecord) -> String {
    let k = p.n_classes();
    let mut s = String::from("trial,label,predicted");
    for c in 0..k {
        let _ = write!(s, ",p_{c}");
    }
    s.push('\n');
    for (i, ((label, pred), probs)) in p.labels.iter().zip(&p.predicted).zip(&p.probabilities).enumerate() {
        let _ = write!(s, "{i},{label},{pred}");
        for v in probs {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_predictions(text: &str) -> std::result::Result<PredictionRecord, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty predictions file")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..3] != ["trial", "label", "predicted"] {
        return Err(format!("unexpected header {header:?}"));
    }
    let k = cols.len() - 3;
    if cols[3..].iter().enumerate().any(|(c, h)| *h != format!("p_{c}")) {
        return Err(format!("unexpected probability columns in {header:?}"));
    }
    let mut rec = PredictionRecord {
        predicted: Vec::new(),
        probabilities: Vec::new(),
        labels: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let err = |what: &str| format!("row {row}: {what} in {line:?}");
        if f.len() != k + 3 {
            return Err(err("wrong field count"));
        }
        if f[0].parse::<usize>().ok() != Some(row) {
            return Err(err("trial index out of sequence"));
        }
        let class = |s: &str| s.parse::<usize>().ok().filter(|&c| c < k);
        rec.labels.push(class(f[1]).ok_or_else(|| err("bad label"))?);
        rec.predicted.push(class(f[2]).ok_or_else(|| err("bad predicted class"))?);
        let probs = f[3..]
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p)))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err("bad probability"))?;
        if stats::argmax(&probs) != rec.predicted[row] {
            return Err(err("predicted class is not the most probable class"));
        }
        rec.probabilities.push(probs);
    }
    if rec.labels.is_empty() {
        return Err("no prediction rows".into());
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub example: String,
    pub dataset: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub p_value_a: f64,
    pub p_value_b: f64,
    pub significant_a: bool,
    pub significant_b: bool,
    pub overlap: OverlapMatrix,
}

/// Comparison of two methods over the retained examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub a: ArchitectureId,
    pub b: ArchitectureId,
    pub n_examples: usize,
    pub mean_accuracy_a: Option<f64>,
    pub mean_accuracy_b: Option<f64>,
    pub sign_test: Option<SignTest>,
    pub per_dataset_sign_test: BTreeMap<String, SignTest>,
    /// Over all test trials of the retained examples.
    pub pooled_overlap: Option<OverlapMatrix>,
    pub per_example: Vec<PairExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedExample {
    pub example: String,
    pub dataset: String,
    pub min_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub alpha: f64,
    pub n_complete: usize,
    pub n_kept: usize,
    pub excluded: Vec<ExcludedExample>,
    /// Examples with at least one failed run; left out of every aggregate.
    pub incomplete: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    /// Complete examples (all methods succeeded), sorted by id.
    pub matrix: AccuracyMatrix,
    pub datasets: Vec<String>,
    pub methods: Vec<ArchitectureId>,
    pub significant: Vec<bool>,
    /// Normalized accuracies of the retained rows.
    pub normalized: Vec<Vec<f64>>,
    pub exclusion: ExclusionSummary,
    pub pairs: Vec<PairStats>,
}

/// Derives every aggregate statistic from per-run results.
pub fn aggregate(
    runs: &[RunData],
    methods: &[ArchitectureId],
    alpha: f64,
    per_dataset: bool,
) -> Result<Aggregates> {
    let mut methods = methods.to_vec();
    methods.sort();
    let mut by_example: BTreeMap<&str, BTreeMap<ArchitectureId, &RunData>> = BTreeMap::new();
    for r in runs {
        by_example
            .entry(r.record.example.as_str())
            .or_default()
            .insert(r.record.architecture, r);
    }
    let mut rows = Vec::new();
    let mut incomplete = Vec::new();
    for (ex, m) in &by_example {
        let cells: Option<Vec<&RunData>> = methods
            .iter()
            .map(|a| m.get(a).copied().filter(|r| r.record.is_ok() && r.predictions.is_some()))
            .collect();
        match cells {
            Some(c) => rows.push(c),
            None => incomplete.push(ex.to_string()),
        }
    }
    let take = |r: &RunData, what: &str, v: Option<f64>| {
        v.ok_or_else(|| HarnessError::Package(format!("run {} has no {what}", r.record.dir())))
    };
    let mut accuracy = Vec::new();
    let mut p_value = Vec::new();
    for row in &rows {
        accuracy.push(row.iter().map(|r| take(r, "accuracy", r.record.accuracy)).collect::<Result<Vec<_>>>()?);
        p_value.push(row.iter().map(|r| take(r, "p-value", r.record.p_value)).collect::<Result<Vec<_>>>()?);
    }
    let matrix = AccuracyMatrix {
        examples: rows.iter().map(|r| r[0].record.example.clone()).collect(),
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        accuracy,
        p_value,
    };
    let datasets: Vec<String> = rows.iter().map(|r| r[0].record.dataset.clone()).collect();
    let significant = stats::select_significant(&matrix, alpha)?;
    let kept = matrix.select(&significant);
    let normalized = stats::normalize_accuracies(&kept)?;
    let kept_rows: Vec<&Vec<&RunData>> = rows.iter().zip(&significant).filter(|(_, &k)| k).map(|(r, _)| r).collect();

    let excluded = matrix
        .examples
        .iter()
        .zip(&datasets)
        .zip(&matrix.p_value)
        .zip(&significant)
        .filter(|(_, &k)| !k)
        .map(|(((e, d), p), _)| ExcludedExample {
            example: e.clone(),
            dataset: d.clone(),
            min_p_value: p.iter().cloned().fold(f64::INFINITY, f64::min),
        })
        .collect();
    let exclusion = ExclusionSummary {
        alpha,
        n_complete: matrix.examples.len(),
        n_kept: kept.examples.len(),
        excluded,
        incomplete,
    };

    let mut pairs = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let col_a = kept.column(i);
            let col_b = kept.column(j);
            let mut per_example = Vec::new();
            let (mut pa, mut pb, mut labels) = (Vec::new(), Vec::new(), Vec::new());
            for (r, row) in kept_rows.iter().enumerate() {
                let (ra, rb) = (row[i], row[j]);
                let (qa, qb) = (ra.predictions.as_ref().unwrap(), rb.predictions.as_ref().unwrap());
                if qa.labels != qb.labels {
                    return Err(HarnessError::Package(format!(
                        "runs {} and {} disagree on test labels",
                        ra.record.dir(),
                        rb.record.dir()
                    )));
                }
                per_example.push(PairExample {
                    example: kept.examples[r].clone(),
                    dataset: ra.record.dataset.clone(),
                    accuracy_a: col_a[r],
                    accuracy_b: col_b[r],
                    p_value_a: kept.p_value[r][i],
                    p_value_b: kept.p_value[r][j],
                    significant_a: kept.p_value[r][i] < alpha,
                    significant_b: kept.p_value[r][j] < alpha,
                    overlap: stats::prediction_overlap(&qa.predicted, &qb.predicted, &qa.labels)?,
                });
                pa.extend_from_slice(&qa.predicted);
                pb.extend_from_slice(&qb.predicted);
                labels.extend_from_slice(&qa.labels);
            }
            let mut per_dataset_sign_test = BTreeMap::new();
            if per_dataset {
                let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
                for e in &per_example {
                    let g = groups.entry(e.dataset.as_str()).or_default();
                    g.0.push(e.accuracy_a);
                    g.1.push(e.accuracy_b);
                }
                for (d, (a, b)) in groups {
                    per_dataset_sign_test.insert(d.to_string(), stats::sign_test(&a, &b)?);
                }
            }
            pairs.push(PairStats {
                a: methods[i],
                b: methods[j],
                n_examples: kept_rows.len(),
                mean_accuracy_a: stats::mean_sd(&col_a).map(|m| m.0),
                mean_accuracy_b: stats::mean_sd(&col_b).map(|m| m.0),
                sign_test: if kept_rows.is_empty() {
                    None
                } else {
                    Some(stats::sign_test(&col_a, &col_b)?)
                },
                per_dataset_sign_test,
                pooled_overlap: if labels.is_empty() {
                    None
                } else {
                    Some(stats::prediction_overlap(&pa, &pb, &labels)?)
                },
                per_example,
            });
        }
    }
    Ok(Aggregates {
        matrix,
        datasets,
        methods,
        significant,
        normalized,
        exclusion,
        pairs,
    })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("serializable") + "\n").into_bytes()
}

/// Stats files keyed by package-relative path.
pub fn render_stats(agg: &Aggregates) -> BTreeMap<String, Vec<u8>> {
    let m = &agg.matrix;
    let mut acc = String::from("example,dataset,method,accuracy,p_value,significant\n");
    for (r, ex) in m.examples.iter().enumerate() {
        for (c, method) in m.methods.iter().enumerate() {
            let _ = writeln!(
                acc,
                "{ex},{},{method},{},{},{}",
                agg.datasets[r], m.accuracy[r][c], m.p_value[r][c], agg.significant[r]
            );
        }
    }
    let mut norm = String::from("example,dataset,method,accuracy,normalized_accuracy,p_value\n");
    let kept: Vec<usize> = (0..m.examples.len()).filter(|&r| agg.significant[r]).collect();
    for (k, &r) in kept.iter().enumerate() {
        for (c, method) in m.methods.iter().enumerate() {
            let _ = writeln!(
                norm,
                "{},{},{method},{},{},{}",
                m.examples[r], agg.datasets[r], m.accuracy[r][c], agg.normalized[k][c], m.p_value[r][c]
            );
        }
    }
    BTreeMap::from([
        (ACCURACY_MATRIX_FILE.to_string(), acc.into_bytes()),
        (NORMALIZED_FILE.to_string(), norm.into_bytes()),
        (PAIRWISE_FILE.to_string(), to_json(&agg.pairs)),
        (EXCLUDED_FILE.to_string(), to_json(&agg.exclusion)),
    ])
}

pub(crate) fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    to_json(v)
}

/// One row of the stored accuracy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub example: String,
    pub dataset: String,
    pub method: String,
    pub accuracy: f64,
    pub p_value: f64,
    pub significant: bool,
}

pub fn parse_accuracy_matrix(text: &str) -> Result<Vec<MatrixRow>> {
    let bad = |m: String| HarnessError::Package(format!("{ACCURACY_MATRIX_FILE}: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("example,dataset,method,accuracy,p_value,significant") {
        return Err(bad("unexpected header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("malformed row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number in {line:?}")));
            Ok(MatrixRow {
                example: f[0].to_string(),
                dataset: f[1].to_string(),
                method: f[2].to_string(),
                accuracy: num(f[3])?,
                p_value: num(f[4])?,
                significant: f[5].parse().map_err(|_| bad(format!("bad flag in {line:?}")))?,
            })
        })
        .collect()
}

/// `(example, method) -> normalized accuracy` from the stored file.
pub fn parse_normalized(text: &str) -> Result<BTreeMap<(String, String), f64>> {
    let bad = |m: String| HarnessError::Package(format!("{NORMALIZED_FILE}: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("example,dataset,method,accuracy,normalized_accuracy,p_value") {
        return Err(bad("unexpected header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("malformed row {line:?}")));
            }
            let v = f[4].parse::<f64>().map_err(|_| bad(format!("bad number in {line:?}")))?;
            Ok(((f[0].to_string(), f[2].to_string()), v))
        })
        .collect()
}

pub fn read_text(dir: &Path, rel: &str) -> Result<String> {
    fs::read_to_string(dir.join(rel)).map_err(|e| HarnessError::Package(format!("cannot read {rel}: {e}")))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, rel: &str) -> Result<T> {
    serde_json::from_str(&read_text(dir, rel)?).map_err(|e| HarnessError::Package(format!("{rel}: {e}")))
}

/// Writes `bytes` under `dir`, creating parent directories.
pub fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
