//! Plot-ready report files derived from a package's stats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stats;

use super::package::{self, PairStats, ACCURACY_MATRIX_FILE, NORMALIZED_FILE, PAIRWISE_FILE, REPORT_DIR};
use super::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(HarnessError::UnknownFormat(other.to_string())),
        }
    }
}

/// Mean and sample deviation of accuracies over the retained examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub n_examples: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_normalized_accuracy: f64,
    pub sd_normalized_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_kept: usize,
    pub no_significant_examples: bool,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub n_examples: usize,
    pub n_significant: usize,
    /// Accuracies of every complete example in the group, per method.
    pub accuracies: BTreeMap<String, Vec<f64>>,
}

/// Report content computed from stored stats files.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub per_dataset: Vec<DatasetReport>,
    pub pairwise: Vec<PairStats>,
}

pub fn build_report(pkg: &Path) -> Result<Report> {
    let rows = package::parse_accuracy_matrix(&package::read_text(pkg, ACCURACY_MATRIX_FILE)?)?;
    let normalized = package::parse_normalized(&package::read_text(pkg, NORMALIZED_FILE)?)?;
    let pairwise: Vec<PairStats> = package::read_json(pkg, PAIRWISE_FILE)?;

    let mut methods: Vec<String> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let kept: Vec<_> = rows.iter().filter(|r| r.significant).collect();
    let mut summary_rows = Vec::new();
    for m in &methods {
        let acc: Vec<f64> = kept.iter().filter(|r| &r.method == m).map(|r| r.accuracy).collect();
        let norm = kept
            .iter()
            .filter(|r| &r.method == m)
            .map(|r| {
                normalized.get(&(r.example.clone(), m.clone())).copied().ok_or_else(|| {
                    HarnessError::Package(format!("no normalized accuracy for {} / {m}", r.example))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let (Some((ma, sa)), Some((mn, sn))) = (stats::mean_sd(&acc), stats::mean_sd(&norm)) {
            summary_rows.push(SummaryRow {
                method: m.clone(),
                n_examples: acc.len(),
                mean_accuracy: ma,
                sd_accuracy: sa,
                mean_normalized_accuracy: mn,
                sd_normalized_accuracy: sn,
            });
        }
    }
    let n_kept = kept.len() / methods.len().max(1);

    let mut groups: BTreeMap<String, DatasetReport> = BTreeMap::new();
    let mut seen: BTreeMap<String, std::collections::BTreeSet<(String, bool)>> = BTreeMap::new();
    for r in &rows {
        let g = groups.entry(r.dataset.clone()).or_insert_with(|| DatasetReport {
            dataset: r.dataset.clone(),
            n_examples: 0,
            n_significant: 0,
            accuracies: BTreeMap::new(),
        });
        g.accuracies.entry(r.method.clone()).or_default().push(r.accuracy);
        seen.entry(r.dataset.clone())
            .or_default()
            .insert((r.example.clone(), r.significant));
    }
    for (d, examples) in seen {
        let g = groups.get_mut(&d).expect("group exists");
        g.n_examples = examples.len();
        g.n_significant = examples.iter().filter(|(_, s)| *s).count();
    }
    Ok(Report {
        summary: Summary {
            n_kept,
            no_significant_examples: n_kept == 0,
            rows: summary_rows,
        },
        per_dataset: groups.into_values().collect(),
        pairwise,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_report(report: &Report, format: ReportFormat) -> BTreeMap<String, Vec<u8>> {
    let path = |name: &str, ext: &str| format!("{REPORT_DIR}/{name}.{ext}");
    match format {
        ReportFormat::Json => BTreeMap::from([
            (path("summary", "json"), package::json_bytes(&report.summary)),
            (path("per_dataset", "json"), package::json_bytes(&report.per_dataset)),
            (path("pairwise", "json"), package::json_bytes(&report.pairwise)),
        ]),
        ReportFormat::Csv => {
            let mut s = String::from(
                "method,n_examples,mean_accuracy,sd_accuracy,mean_normalized_accuracy,sd_normalized_accuracy\n",
            );
            for r in &report.summary.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.method,
                    r.n_examples,
                    r.mean_accuracy,
                    r.sd_accuracy,
                    r.mean_normalized_accuracy,
                    r.sd_normalized_accuracy
                );
            }
            if report.summary.no_significant_examples {
                s.push_str("# no significant examples\n");
            }
            let mut d = String::from("dataset,method,n_examples,n_significant,accuracies\n");
            for g in &report.per_dataset {
                for (m, acc) in &g.accuracies {
                    let list: Vec<String> = acc.iter().map(|a| a.to_string()).collect();
                    let _ = writeln!(d, "{},{m},{},{},{}", g.dataset, g.n_examples, g.n_significant, list.join(";"));
                }
            }
            let mut p = String::from(
                "a,b,n_examples,mean_accuracy_a,mean_accuracy_b,sign_test_p,both_correct,both_wrong,a_only,b_only\n",
            );
            let mut e = String::from(
                "a,b,example,dataset,accuracy_a,accuracy_b,significant_a,significant_b,both_correct,both_wrong,a_only,b_only\n",
            );
            for pair in &report.pairwise {
                let o = pair.pooled_overlap;
                let _ = writeln!(
                    p,
                    "{},{},{},{},{},{},{},{},{},{}",
                    pair.a,
                    pair.b,
                    pair.n_examples,
                    opt(pair.mean_accuracy_a),
                    opt(pair.mean_accuracy_b),
                    opt(pair.sign_test.as_ref().map(|t| t.p_value)),
                    opt(o.map(|o| o.both_correct)),
                    opt(o.map(|o| o.both_wrong)),
                    opt(o.map(|o| o.a_only)),
                    opt(o.map(|o| o.b_only)),
                );
                for x in &pair.per_example {
                    let _ = writeln!(
                        e,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        pair.a,
                        pair.b,
                        x.example,
                        x.dataset,
                        x.accuracy_a,
                        x.accuracy_b,
                        x.significant_a,
                        x.significant_b,
                        x.overlap.both_correct,
                        x.overlap.both_wrong,
                        x.overlap.a_only,
                        x.overlap.b_only
                    );
                }
            }
            BTreeMap::from([
                (path("summary", "csv"), s.into_bytes()),
                (path("per_dataset", "csv"), d.into_bytes()),
                (path("pairwise", "csv"), p.into_bytes()),
                (path("pairwise_examples", "csv"), e.into_bytes()),
            ])
        }
    }
}

/// Writes report files into the package and returns their paths.
pub fn emit_report(pkg: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let report = build_report(pkg)?;
    let mut written = Vec::new();
    for (rel, bytes) in render_report(&report, format) {
        package::write_file(pkg, &rel, &bytes)?;
        written.push(pkg.join(rel));
    }
    Ok(written)
}
