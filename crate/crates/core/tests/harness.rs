mod common;

use std::fs;
use std::path::Path;

use common::{payload_digests, small_config, synthetic_dataset, write_fixture_package};
use eegbench::architectures::ArchitectureId;
use eegbench::harness::report::{build_report, render_report};
use eegbench::harness::verify::IssueKind;
use eegbench::harness::{
    run_comparison, verify_package, ComparisonConfig, HarnessError, PackageStatus, ReportFormat, VerifyOptions,
};
use serde_json::{json, Value};

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn files_under(root: &Path, rel: &str, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(root.join(rel)).unwrap().map(|e| e.unwrap()).collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = format!("{rel}/{}", e.file_name().to_string_lossy());
        if e.file_type().unwrap().is_dir() {
            files_under(root, &name, out);
        } else {
            out.push((name, fs::read(e.path()).unwrap()));
        }
    }
}

fn payload(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    files_under(dir, "runs", &mut out);
    files_under(dir, "stats", &mut out);
    out
}

/// Flips the predicted class of the first test trial of a 2-class run,
/// swapping its probabilities so the file stays consistent.
fn flip_first_prediction(pkg: &Path, run: &str) {
    let path = pkg.join(run).join("predictions.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[2] = if cells[2] == "0" { "1".into() } else { "0".into() };
    cells.swap(3, 4);
    lines[1] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn comparison_is_complete_reproducible_and_verifiable() {
    let cfg = small_config(
        vec![synthetic_dataset("ex_a", 4, 50, 4.0, 1.8), synthetic_dataset("ex_b", 4, 50, 4.0, 1.8)],
        &ArchitectureId::ALL,
        2,
        17,
    );
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let pkg = run_comparison(&cfg, &a).unwrap();
    assert_eq!(pkg.index.status, PackageStatus::Complete);
    assert_eq!(pkg.index.n_runs, 8);
    assert_eq!(pkg.aggregates.matrix.methods, ["deep4", "shallow", "eegnet_v1", "eegnet_v2"]);
    assert_eq!(pkg.aggregates.matrix.examples, ["ex_a", "ex_b"]);
    assert_eq!(pkg.aggregates.pairs.len(), 6);
    for f in ["config.resolved.json", "provenance.json", "report/summary.csv", "runs/ex_a/deep4/model.bin"] {
        assert!(a.join(f).is_file(), "{f}");
    }

    run_comparison(&cfg, &b).unwrap();
    assert_eq!(fs::read(a.join("results.json")).unwrap(), fs::read(b.join("results.json")).unwrap());
    assert_eq!(payload(&a), payload(&b));

    let report = verify_package(&a, VerifyOptions::default()).unwrap();
    assert!(report.passed, "{report}");
    assert_eq!(report.runs_checked, 8);

    let flipped = root.path().join("flipped");
    copy_dir(&a, &flipped);
    flip_first_prediction(&flipped, "runs/ex_b/shallow");
    let report = verify_package(&flipped, VerifyOptions::default()).unwrap();
    assert!(!report.passed);
    let has = |kind: IssueKind, needle: &str| report.issues.iter().any(|i| i.kind == kind && i.item.contains(needle));
    assert!(has(IssueKind::Digest, "runs/ex_b/shallow/predictions.csv"), "{report}");
    assert!(has(IssueKind::Aggregate, "stats/accuracy_matrix.csv"), "{report}");
    assert!(has(IssueKind::RunRecord, "runs/ex_b/shallow"), "{report}");
    assert!(has(IssueKind::Aggregate, "stats/pairwise.json"), "{report}");
    assert!(!has(IssueKind::Unreadable, ""), "{report}");

    // any single byte of a predictions file
    for (i, run) in ["runs/ex_a/deep4", "runs/ex_b/eegnet_v2"].iter().enumerate() {
        let mutated = root.path().join(format!("byte{i}"));
        copy_dir(&a, &mutated);
        let path = mutated.join(run).join("predictions.csv");
        let mut bytes = fs::read(&path).unwrap();
        let at = bytes.len() / 2 + i;
        bytes[at] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        let report = verify_package(&mutated, VerifyOptions::default()).unwrap();
        assert!(!report.passed);
        let file = format!("{run}/predictions.csv");
        assert!(report.issues.iter().any(|x| x.kind == IssueKind::Digest && x.item == file), "{report}");
    }

    let edited = root.path().join("edited");
    copy_dir(&a, &edited);
    let config = edited.join("config.resolved.json");
    let text = fs::read_to_string(&config).unwrap().replace("\"master_seed\": 17", "\"master_seed\": 18");
    fs::write(&config, text).unwrap();
    let report = verify_package(&edited, VerifyOptions::default()).unwrap();
    assert!(report.issues.iter().any(|i| i.kind == IssueKind::ConfigHash), "{report}");
}

#[test]
fn retraining_reproduces_the_stored_runs() {
    let cfg = small_config(vec![synthetic_dataset("r", 4, 40, 4.0, 0.5)], &[ArchitectureId::EegnetV2], 2, 3);
    let dir = tempfile::tempdir().unwrap();
    run_comparison(&cfg, dir.path()).unwrap();
    let report = verify_package(dir.path(), VerifyOptions { retrain: true }).unwrap();
    assert!(report.passed, "{report}");
    assert_eq!(report.retrained, 1);
}

#[test]
fn a_failed_run_marks_the_package_partial() {
    // 0.5 s at 250 Hz is too short for the deep network but fine for the compact one
    let cfg = small_config(
        vec![synthetic_dataset("long", 4, 40, 4.0, 1.8), synthetic_dataset("short", 4, 40, 4.0, 0.5)],
        &[ArchitectureId::Deep4, ArchitectureId::EegnetV2],
        1,
        5,
    );
    let dir = tempfile::tempdir().unwrap();
    let pkg = run_comparison(&cfg, dir.path()).unwrap();
    assert_eq!(pkg.index.status, PackageStatus::Partial);
    assert_eq!(pkg.index.n_failed, 1);
    let failed = pkg.index.runs.iter().find(|r| r.error.is_some()).unwrap();
    assert_eq!((failed.example.as_str(), failed.architecture), ("short", ArchitectureId::Deep4));
    assert_eq!(pkg.aggregates.exclusion.incomplete, ["short"]);
    let record: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("runs/short/deep4/run.json")).unwrap()).unwrap();
    assert_eq!(record["status"], "failed");
    assert!(verify_package(dir.path(), VerifyOptions::default()).unwrap().passed);

    let all_fail = small_config(vec![synthetic_dataset("short", 4, 40, 4.0, 0.5)], &[ArchitectureId::Deep4], 1, 5);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_comparison(&all_fail, dir.path()), Err(HarnessError::AllRunsFailed(1))));
}

#[test]
fn unknown_fields_and_used_output_directories_are_rejected() {
    let cfg = small_config(vec![synthetic_dataset("x", 4, 40, 4.0, 0.5)], &[ArchitectureId::EegnetV2], 1, 0);
    let mut v: Value = serde_json::from_str(&cfg.resolved_json()).unwrap();
    v["stats"]["n_permutations"] = json!(10);
    assert!(matches!(ComparisonConfig::from_json(&v.to_string()), Err(HarnessError::Config(_))));
    let mut v: Value = serde_json::from_str(&cfg.resolved_json()).unwrap();
    v["stats"]["alpha"] = json!(1.0);
    assert!(matches!(ComparisonConfig::from_json(&v.to_string()), Err(HarnessError::Config(_))));

    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep"), "x").unwrap();
    assert!(matches!(run_comparison(&cfg, dir.path()), Err(HarnessError::OutputNotEmpty(_))));
}

fn leaves(v: &Value, prefix: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                leaves(x, format!("{prefix}/{k}"), out);
            }
        }
        Value::Array(a) if a.iter().any(|x| x.is_object()) => {
            for (i, x) in a.iter().enumerate() {
                leaves(x, format!("{prefix}/{i}"), out);
            }
        }
        _ => out.push(prefix),
    }
}

#[test]
fn every_config_field_influences_the_payload() {
    let spec = "/datasets/0/source/synthetic/spec";
    let base = json!({
        "datasets": [synthetic_dataset("ex", 6, 80, 8.0, 0.5)],
        "architectures": ["eegnet_v1", "eegnet_v2"],
        "training": { "n_epochs": 4, "batch_size": 16 },
        "stats": { "n_perm": 200, "enumeration_cap": 1 },
        "master_seed": 1,
    });
    let base_cfg = ComparisonConfig::from_json(&base.to_string()).unwrap();
    let resolved: Value = serde_json::from_str(&base_cfg.resolved_json()).unwrap();

    // each entry edits one or more fields that must change together
    let w = |s: f64, e: f64| json!({ "start_offset_s": s, "end_offset_s": e });
    let f = |p: &str| p.to_string();
    let s = |k: &str| format!("{spec}/{k}");
    let edits: Vec<Vec<(String, Value)>> = vec![
        vec![(f("/datasets/0/id"), json!("other"))],
        vec![(f("/datasets/0/dataset"), json!("group"))],
        vec![(f("/datasets/0/source/synthetic/seed"), json!(99))],
        vec![(f("/datasets/0/window"), w(0.0, 0.45)), (s("window"), w(0.0, 0.45))],
        vec![(f("/datasets/0/n_classes"), json!(3)), (s("n_classes"), json!(3)), (s("class_balance"), json!([0.34, 0.33, 0.33]))],
        vec![(s("n_channels"), json!(5))],
        vec![(s("source_rate_hz"), json!(500.0))],
        vec![(s("n_trials"), json!(70))],
        vec![(s("class_balance"), json!([0.6, 0.4]))],
        vec![(s("snr"), json!(2.0))],
        vec![(s("artifact_rate"), json!(0.3))],
        vec![(s("broken_channel_count"), json!(1))],
        vec![(s("window"), w(0.0, 0.45))],
        vec![(s("inter_trial_gap_s"), json!(0.7))],
        vec![(s("noise_std_uv"), json!(20.0))],
        vec![(f("/architectures"), json!(["shallow", "eegnet_v2"]))],
        vec![(f("/training/learning_rate"), json!(0.01))],
        vec![(f("/training/beta1"), json!(0.8))],
        vec![(f("/training/beta2"), json!(0.99))],
        vec![(f("/training/epsilon"), json!(1e-3))],
        vec![(f("/training/batch_size"), json!(20))],
        vec![(f("/training/n_epochs"), json!(5))],
        vec![(f("/training/max_norm"), json!(0.05))],
        vec![(f("/training_overrides"), json!({ "eegnet_v2": { "n_epochs": 3 } }))],
        vec![(f("/preprocess/low_hz"), json!(4.0))],
        vec![(f("/preprocess/high_hz"), json!(38.0))],
        vec![(f("/preprocess/target_hz"), json!(200.0))],
        vec![(f("/preprocess/test_fraction"), json!(0.3))],
        vec![(f("/preprocess/standardize"), json!(false))],
        vec![(f("/cleaning/amplitude_uv"), json!(60.0))],
        vec![(f("/cleaning/broken_fraction"), json!(0.001))],
        vec![(f("/stats/n_perm"), json!(300))],
        vec![(f("/stats/alpha"), json!(0.2))],
        vec![(f("/stats/enumeration_cap"), json!(100_000))],
        vec![(f("/stats/per_dataset_sign_test"), json!(true))],
        vec![(f("/master_seed"), json!(2))],
    ];

    let mut fields = Vec::new();
    leaves(&resolved, String::new(), &mut fields);
    for f in fields.iter().filter(|f| **f != s("paradigm")) {
        assert!(edits.iter().flatten().any(|(p, _)| f == p || f.starts_with(&format!("{p}/"))), "config field {f} has no perturbation");
    }

    let root = tempfile::tempdir().unwrap();
    let run = |name: &str, v: &Value| {
        let cfg = ComparisonConfig::from_json(&v.to_string()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let out = root.path().join(name.replace('/', "_"));
        match run_comparison(&cfg, &out) {
            Ok(_) | Err(HarnessError::AllRunsFailed(_)) => payload_digests(&out),
            Err(e) => panic!("{name}: {e}"),
        }
    };
    let reference = run("base", &resolved);
    for edit in &edits {
        let mut v = resolved.clone();
        for (p, x) in edit {
            *v.pointer_mut(p).unwrap_or_else(|| panic!("{p} not in config")) = x.clone();
        }
        let name = &edit[0].0;
        assert_ne!(run(name, &v), reference, "{name} did not change the payload");
    }

    // documented no-ops: execution settings and the paradigm label
    let mut v = resolved.clone();
    v["workers"] = json!(2);
    v["output_dir"] = json!("/elsewhere");
    *v.pointer_mut(&s("paradigm")).unwrap() = json!("other");
    assert_eq!(run("no_ops", &v), reference);
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn report_reproduces_the_summary_layout_from_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [("e1", "d1", [0.7, 0.7, 0.7, 0.7]), ("e2", "d1", [0.9, 0.7, 0.8, 0.8])];
    write_fixture_package(dir.path(), &rows, 0.001);
    let report = build_report(dir.path()).unwrap();
    let s = &report.summary;
    assert!(!s.no_significant_examples);
    let methods: Vec<&str> = s.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["deep4", "shallow", "eegnet_v1", "eegnet_v2"]);
    for (c, row) in s.rows.iter().enumerate() {
        let acc: Vec<f64> = rows.iter().map(|r| r.2[c]).collect();
        let norm: Vec<f64> = rows.iter().map(|r| r.2[c] / (r.2.iter().sum::<f64>() / 4.0)).collect();
        assert!((row.mean_accuracy - (acc[0] + acc[1]) / 2.0).abs() < 1e-12);
        assert!((row.sd_accuracy - sd(&acc)).abs() < 1e-12);
        assert!((row.mean_normalized_accuracy - (norm[0] + norm[1]) / 2.0).abs() < 1e-12);
        assert!((row.sd_normalized_accuracy - sd(&norm)).abs() < 1e-12);
    }
    assert!((s.rows[0].mean_accuracy - 0.8).abs() < 1e-12);
    assert!((s.rows[0].sd_accuracy - 0.02f64.sqrt()).abs() < 1e-12);
    assert!((s.rows[0].mean_normalized_accuracy - 1.0625).abs() < 1e-12);

    assert_eq!(report.pairwise.len(), 6);
    let d4_shallow = &report.pairwise[0];
    assert_eq!((d4_shallow.a, d4_shallow.b), (ArchitectureId::Deep4, ArchitectureId::Shallow));
    assert_eq!(d4_shallow.per_example.len(), 2);
    assert_eq!(d4_shallow.sign_test.as_ref().unwrap().n, 1);

    let files = render_report(&report, ReportFormat::Csv);
    let summary = String::from_utf8(files["report/summary.csv"].clone()).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("method,n_examples,mean_accuracy,sd_accuracy,mean_normalized_accuracy,sd_normalized_accuracy\n"));
    let pairwise = String::from_utf8(files["report/pairwise.csv"].clone()).unwrap();
    assert_eq!(pairwise.lines().count(), 7);
    let per_dataset = String::from_utf8(files["report/per_dataset.csv"].clone()).unwrap();
    assert!(per_dataset.lines().skip(1).all(|l| l.contains(",2,2,")), "{per_dataset}");
}

#[test]
fn report_marks_an_empty_kept_set() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture_package(dir.path(), &[("e1", "d1", [0.5, 0.6, 0.5, 0.4])], 0.5);
    let report = build_report(dir.path()).unwrap();
    assert!(report.summary.no_significant_examples);
    assert!(report.summary.rows.is_empty());
    let csv = render_report(&report, ReportFormat::Csv);
    assert!(String::from_utf8_lossy(&csv["report/summary.csv"]).contains("# no significant examples"));
    let json = render_report(&report, ReportFormat::Json);
    let v: Value = serde_json::from_slice(&json["report/summary.json"]).unwrap();
    assert_eq!(v["no_significant_examples"], true);
    assert!("pdf".parse::<ReportFormat>().is_err());
}
