//! Reproducibility checks on a written package.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats;

use super::package::{self, RunData, RUNS_DIR, STATS_DIR};
use super::{
    aggregate, execute_run, load_runs, prepare_example, render_stats, sha256_hex, ComparisonConfig,
    ResultsIndex, Result, CONFIG_FILE, RESULTS_FILE,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Re-run preprocessing and training and compare the run files.
    pub retrain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    ConfigHash,
    Digest,
    MissingFile,
    UnlistedFile,
    Unreadable,
    RunRecord,
    Aggregate,
    Retrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub item: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub runs_checked: usize,
    pub retrained: usize,
    pub issues: Vec<Issue>,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            return writeln!(f, "verification passed ({} runs checked)", self.runs_checked);
        }
        writeln!(f, "verification failed with {} issue(s):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  [{:?}] {}: {}", i.kind, i.item, i.detail)?;
        }
        Ok(())
    }
}

struct Issues(Vec<Issue>);

impl Issues {
    fn add(&mut self, kind: IssueKind, item: impl Into<String>, detail: impl Into<String>) {
        self.0.push(Issue {
            kind,
            item: item.into(),
            detail: detail.into(),
        });
    }
}

fn list_files(root: &Path, rel: &str, out: &mut BTreeSet<String>) -> std::io::Result<()> {
    let dir = root.join(rel);
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = format!("{rel}/{}", entry.file_name().to_string_lossy());
        if entry.file_type()?.is_dir() {
            list_files(root, &name, out)?;
        } else {
            out.insert(name);
        }
    }
    Ok(())
}

/// Lines present in only one of the two texts, in stored order.
fn changed_lines(stored: &str, expected: &str) -> Vec<String> {
    let exp: BTreeSet<&str> = expected.lines().collect();
    let got: BTreeSet<&str> = stored.lines().collect();
    let mut out: Vec<String> = stored
        .lines()
        .filter(|l| !exp.contains(l))
        .map(|l| format!("stored {l:?}"))
        .collect();
    out.extend(expected.lines().filter(|l| !got.contains(l)).map(|l| format!("expected {l:?}")));
    out
}

/// Checks the config hash, file digests and every aggregate against a
/// recomputation from the per-run records.
pub fn verify_package(dir: &Path, opts: VerifyOptions) -> Result<VerifyReport> {
    let index: ResultsIndex = package::read_json(dir, RESULTS_FILE)?;
    let mut issues = Issues(Vec::new());

    let config_text = package::read_text(dir, CONFIG_FILE)?;
    if sha256_hex(config_text.as_bytes()) != index.config_hash {
        issues.add(IssueKind::ConfigHash, CONFIG_FILE, "sha256 differs from the hash in results.json");
    }
    let cfg = match ComparisonConfig::from_json(&config_text) {
        Ok(c) => Some(c),
        Err(e) => {
            issues.add(IssueKind::Unreadable, CONFIG_FILE, e.to_string());
            None
        }
    };

    let mut present = BTreeSet::new();
    list_files(dir, RUNS_DIR, &mut present)?;
    list_files(dir, STATS_DIR, &mut present)?;
    for (rel, digest) in &index.files {
        match fs::read(dir.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == *digest => {}
            Ok(_) => issues.add(IssueKind::Digest, rel, "content differs from the recorded sha256"),
            Err(_) => issues.add(IssueKind::MissingFile, rel, "listed in results.json but missing"),
        }
    }
    for rel in present.iter().filter(|r| !index.files.contains_key(*r)) {
        issues.add(IssueKind::UnlistedFile, rel, "not listed in results.json");
    }

    let (runs, problems) = load_runs(dir, &index);
    for (file, p) in problems {
        issues.add(IssueKind::Unreadable, file, p);
    }
    for (r, s) in runs.iter().zip(&index.runs) {
        let rec = &r.record;
        if rec.status != s.status || rec.accuracy != s.accuracy || rec.p_value != s.p_value || rec.seed != s.seed {
            issues.add(IssueKind::RunRecord, rec.dir(), "run.json disagrees with the results.json run list");
        }
    }

    if let Some(cfg) = &cfg {
        let recomputed = check_runs(cfg, &runs, &mut issues);
        check_aggregates(dir, cfg, &recomputed, &mut issues);
    }

    let mut retrained = 0;
    if opts.retrain {
        if let Some(cfg) = &cfg {
            retrained = retrain(dir, cfg, &runs, &mut issues);
        }
    }
    Ok(VerifyReport {
        passed: issues.0.is_empty(),
        runs_checked: runs.len(),
        retrained,
        issues: issues.0,
    })
}

/// Recomputes accuracy and p-value of each run from its predictions.
fn check_runs(cfg: &ComparisonConfig, runs: &[RunData], issues: &mut Issues) -> Vec<RunData> {
    let n_classes: BTreeMap<&str, usize> = cfg.datasets.iter().map(|d| (d.id.as_str(), d.n_classes)).collect();
    let mut out = Vec::new();
    for r in runs {
        let mut r2 = r.clone();
        if let (true, Some(p)) = (r.record.is_ok(), &r.predictions) {
            let item = format!("{}/predictions.csv", r.record.dir());
            let k = n_classes.get(r.record.example.as_str()).copied().unwrap_or(p.n_classes());
            match stats::mean_class_accuracy(&p.predicted, &p.labels, k) {
                Ok(a) if Some(a) == r.record.accuracy => {}
                Ok(a) => issues.add(
                    IssueKind::RunRecord,
                    &item,
                    format!("accuracy recomputes to {a}, run.json has {}", opt(r.record.accuracy)),
                ),
                Err(e) => issues.add(IssueKind::RunRecord, &item, e.to_string()),
            }
            r2.record.accuracy = stats::mean_class_accuracy(&p.predicted, &p.labels, k).ok();
            let perm = stats::permutation_test_with_cap(
                &p.predicted,
                &p.labels,
                k,
                cfg.stats.n_perm,
                r.record.permutation_seed,
                cfg.stats.enumeration_cap,
            );
            match perm {
                Ok(pr) if Some(pr.p_value) == r.record.p_value => {}
                Ok(pr) => issues.add(
                    IssueKind::RunRecord,
                    &item,
                    format!("p-value recomputes to {}, run.json has {}", pr.p_value, opt(r.record.p_value)),
                ),
                Err(e) => issues.add(IssueKind::RunRecord, &item, e.to_string()),
            }
            r2.record.p_value = stats::permutation_test_with_cap(
                &p.predicted,
                &p.labels,
                k,
                cfg.stats.n_perm,
                r.record.permutation_seed,
                cfg.stats.enumeration_cap,
            )
            .ok()
            .map(|p| p.p_value);
        }
        out.push(r2);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or("nothing".into(), |x| x.to_string())
}

fn check_aggregates(dir: &Path, cfg: &ComparisonConfig, runs: &[RunData], issues: &mut Issues) {
    let agg = match aggregate(runs, &cfg.architectures, cfg.stats.alpha, cfg.stats.per_dataset_sign_test) {
        Ok(a) => a,
        Err(e) => {
            issues.add(IssueKind::Aggregate, "stats", format!("cannot recompute: {e}"));
            return;
        }
    };
    for (rel, expected) in render_stats(&agg) {
        let stored = match fs::read(dir.join(&rel)) {
            Ok(b) => b,
            Err(_) => {
                issues.add(IssueKind::MissingFile, &rel, "stats file missing");
                continue;
            }
        };
        if stored != expected {
            let diff = changed_lines(&String::from_utf8_lossy(&stored), &String::from_utf8_lossy(&expected));
            let shown: Vec<String> = diff.iter().take(6).cloned().collect();
            let more = diff.len().saturating_sub(shown.len());
            let mut detail = format!("differs from recomputation: {}", shown.join("; "));
            if more > 0 {
                detail.push_str(&format!(" (+{more} more)"));
            }
            issues.add(IssueKind::Aggregate, &rel, detail);
        }
    }
}

fn retrain(dir: &Path, cfg: &ComparisonConfig, runs: &[RunData], issues: &mut Issues) -> usize {
    let mut prepared = BTreeMap::new();
    let mut count = 0;
    for r in runs.iter().filter(|r| r.record.is_ok()) {
        let Some(d) = cfg.datasets.iter().find(|d| d.id == r.record.example) else {
            issues.add(IssueKind::Retrain, r.record.dir(), "example missing from config");
            continue;
        };
        let prep = prepared.entry(d.id.clone()).or_insert_with(|| prepare_example(cfg, d));
        let art = execute_run(cfg, d, prep, r.record.architecture);
        count += 1;
        for (rel, bytes) in art.files {
            match fs::read(dir.join(&rel)) {
                Ok(stored) if stored == bytes => {}
                Ok(_) => issues.add(IssueKind::Retrain, rel, "retrained output differs"),
                Err(_) => issues.add(IssueKind::Retrain, rel, "file missing"),
            }
        }
    }
    count
}
