#![allow(dead_code)]

use std::f64::consts::PI;

use eegbench::architectures::ArchitectureId;
use eegbench::eegdata::{EpochWindow, SyntheticSpec, TrialSet};
use eegbench::harness::{aggregate, render_stats, ComparisonConfig, DatasetConfig, DatasetSource, RunData, RunRecord};
use eegbench::tensornn::{cross_entropy, Layer, LayerSpec, Mode, NetworkGraph, Shape, Tensor};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Norm-wise relative error `||a - n|| / max(||a||, ||n||, 1e-6)`.
///
/// The floor covers gradients that vanish identically, such as a conv bias
/// followed by batch normalization, where both sides are rounding noise.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

pub fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Indices to probe: all of them when few, otherwise a seeded sample.
fn probe_indices(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Finite-difference check of one layer against the loss `sum(w * y)`.
/// Returns (name, relative error) for the input and every parameter.
pub fn check_layer(spec: &LayerSpec, input: Shape, seed: u64, max_probes: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::from_spec(spec).unwrap();
    layer.init(&mut rng);
    // move parameters away from their initial constants (BN gamma = 1, bias = 0)
    for slot in layer.param_slots(0) {
        for v in slot.value.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let x = random_tensor(input, &mut rng);
    let out_shape = layer.output_shape(input).unwrap();
    let w = random_tensor(out_shape, &mut rng);

    let loss = |layer: &mut Layer, x: &Tensor| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
        let mut aux = Vec::new();
        let y = layer.forward(x, Mode::Train, &mut r, &mut aux).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };

    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
    let mut aux = Vec::new();
    layer.forward(&x, Mode::Train, &mut r, &mut aux).unwrap();
    let gx = layer.backward(&x, &w, &aux).unwrap();

    let mut out = Vec::new();
    let idx = probe_indices(x.len(), max_probes, &mut rng);
    let mut num = Vec::new();
    for &i in &idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let lp = loss(&mut layer, &xp);
        xp.data_mut()[i] -= 2.0 * H;
        let lm = loss(&mut layer, &xp);
        num.push((lp - lm) / (2.0 * H));
    }
    let ana: Vec<f64> = idx.iter().map(|&i| gx.data()[i]).collect();
    out.push(("input".to_string(), rel_error(&ana, &num)));

    let grads: Vec<(String, Vec<f64>)> = layer
        .param_slots(0)
        .into_iter()
        .map(|s| (s.name.to_string(), s.grad.to_vec()))
        .collect();
    for (p, (name, grad)) in grads.iter().enumerate() {
        let idx = probe_indices(grad.len(), max_probes, &mut rng);
        let mut num = Vec::new();
        for &i in &idx {
            layer.param_slots(0)[p].value[i] += H;
            let lp = loss(&mut layer, &x);
            layer.param_slots(0)[p].value[i] -= 2.0 * H;
            let lm = loss(&mut layer, &x);
            layer.param_slots(0)[p].value[i] += H;
            num.push((lp - lm) / (2.0 * H));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        out.push((name.clone(), rel_error(&ana, &num)));
    }
    out
}

/// Finite-difference check of a whole network through the cross-entropy loss.
/// Returns (layer/param name, relative error) for the input and each parameter.
pub fn check_network(net: &mut NetworkGraph, n: usize, seed: u64, max_probes: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [f, c, t] = net.input_shape();
    let x = random_tensor([n, f, c, t], &mut rng);
    let k = net.n_classes();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();

    let loss = |net: &mut NetworkGraph, x: &Tensor| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
        let logits = net.forward_train(x, &mut r).unwrap();
        cross_entropy(&logits, &labels).unwrap().0
    };

    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
    let logits = net.forward_train(&x, &mut r).unwrap();
    let (_, g) = cross_entropy(&logits, &labels).unwrap();
    let gx = net.backward(&g).unwrap();

    let mut out = Vec::new();
    let idx = probe_indices(x.len(), max_probes, &mut rng);
    let mut num = Vec::new();
    for &i in &idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let lp = loss(net, &xp);
        xp.data_mut()[i] -= 2.0 * H;
        let lm = loss(net, &xp);
        num.push((lp - lm) / (2.0 * H));
    }
    let ana: Vec<f64> = idx.iter().map(|&i| gx.data()[i]).collect();
    out.push(("input".to_string(), rel_error(&ana, &num)));

    let kinds = net.layer_kinds();
    let grads: Vec<(String, Vec<f64>)> = net
        .param_slots()
        .into_iter()
        .map(|s| (format!("{}:{}.{}", s.layer, kinds[s.layer], s.name), s.grad.to_vec()))
        .collect();
    for (p, (name, grad)) in grads.iter().enumerate() {
        let idx = probe_indices(grad.len(), max_probes, &mut rng);
        let mut num = Vec::new();
        for &i in &idx {
            net.param_slots()[p].value[i] += H;
            let lp = loss(net, &x);
            net.param_slots()[p].value[i] -= 2.0 * H;
            let lm = loss(net, &x);
            net.param_slots()[p].value[i] += H;
            num.push((lp - lm) / (2.0 * H));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        out.push((name.clone(), rel_error(&ana, &num)));
    }
    out
}

/// Parameter totals from per-block formulas, written independently of the builders.
pub fn analytic_param_count(arch: ArchitectureId, c: usize, t: usize, k: usize) -> usize {
    let pool = |n: usize, p: usize, s: usize| (n - p) / s + 1;
    let conv = |cin: usize, cout: usize, kh: usize, kw: usize| cin * cout * kh * kw + cout;
    let bn = |m: usize| 2 * m;
    match arch {
        ArchitectureId::Deep4 => {
            let mut total = conv(1, 25, 1, 10) + conv(25, 25, c, 1) + bn(25);
            let mut w = pool(t - 9, 3, 3);
            for (cin, cout) in [(25, 50), (50, 100), (100, 200)] {
                total += conv(cin, cout, 1, 10) + bn(cout);
                w = pool(w - 9, 3, 3);
            }
            total + 200 * w * k + k
        }
        ArchitectureId::Shallow => {
            let w = pool(t - 24, 75, 15);
            conv(1, 40, 1, 25) + conv(40, 40, c, 1) + bn(40) + 40 * w * k + k
        }
        ArchitectureId::EegnetV1 => {
            // after the spatial conv the 16 maps become the height axis
            let (h1, w1) = (16 / 2, pool(t, 4, 4));
            let (h2, w2) = (pool(h1, 2, 2), pool(w1, 4, 4));
            conv(1, 16, c, 1) + bn(16) + conv(1, 4, 2, 32) + bn(4) + conv(4, 4, 8, 4) + bn(4) + 4 * h2 * w2 * k + k
        }
        ArchitectureId::EegnetV2 => {
            let w = pool(pool(t, 4, 4), 8, 8);
            let separable = 16 * 16 + 16 * 16 + 16;
            conv(1, 8, 1, 64) + bn(8) + 16 * c + bn(16) + separable + bn(16) + 16 * w * k + k
        }
    }
}

/// Two classes told apart by which channel carries a 10 Hz burst.
pub fn separable_trials(c: usize, t: usize, n: usize, seed: u64) -> TrialSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 128.0;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut data = Array3::<f32>::zeros((n, c, t));
    for (i, &y) in labels.iter().enumerate() {
        let phase = rng.random_range(0.0..2.0 * PI);
        for ch in 0..c {
            for s in 0..t {
                let mut v = rng.random_range(-0.5..0.5);
                if ch == y * (c - 1) {
                    v += 2.0 * (2.0 * PI * 10.0 * s as f64 / rate + phase).sin();
                }
                data[[i, ch, s]] = v as f32;
            }
        }
    }
    TrialSet::new(data, labels, 2, rate).unwrap()
}

/// Per-channel log power, the features used by the separability oracle.
pub fn log_power_features(ts: &TrialSet) -> Vec<Vec<f64>> {
    let (n, c, t) = ts.data.dim();
    (0..n)
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let p: f64 = (0..t).map(|s| (ts.data[[i, ch, s]] as f64).powi(2)).sum::<f64>() / t as f64;
                    p.ln()
                })
                .collect()
        })
        .collect()
}

/// Plain gradient-descent logistic regression; returns training accuracy.
pub fn logistic_regression_accuracy(x: &[Vec<f64>], y: &[usize], steps: usize) -> f64 {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..steps {
        let mut g = vec![0.0; d + 1];
        for (xi, &yi) in x.iter().zip(y) {
            let z = w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let e = p - yi as f64;
            for j in 0..d {
                g[j] += e * xi[j];
            }
            g[d] += e;
        }
        for j in 0..=d {
            w[j] -= 0.5 * g[j] / x.len() as f64;
        }
    }
    let correct = x
        .iter()
        .zip(y)
        .filter(|(xi, &yi)| {
            let z = w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            (z > 0.0) as usize == yi
        })
        .count();
    correct as f64 / y.len() as f64
}

/// Shortest time axis at least `t` that every listed architecture accepts.
pub fn feasible_t(arch: ArchitectureId, t: usize) -> usize {
    t.max(eegbench::architectures::min_time_samples(arch))
}

pub fn synthetic_dataset(id: &str, c: usize, n_trials: usize, snr: f64, window_s: f64) -> DatasetConfig {
    let window = EpochWindow::new(0.0, window_s).unwrap();
    let mut spec = SyntheticSpec::balanced(2, c, 250.0, n_trials, snr, window);
    spec.inter_trial_gap_s = 0.5;
    DatasetConfig {
        id: id.to_string(),
        dataset: None,
        source: DatasetSource::Synthetic { spec, seed: None },
        window,
        n_classes: 2,
    }
}

/// A comparison that trains in seconds: few epochs, few permutations.
pub fn small_config(datasets: Vec<DatasetConfig>, archs: &[ArchitectureId], epochs: usize, seed: u64) -> ComparisonConfig {
    let mut json = serde_json::json!({
        "datasets": datasets,
        "architectures": archs,
        "master_seed": seed,
    });
    json["training"] = serde_json::json!({ "n_epochs": epochs, "batch_size": 32 });
    json["stats"] = serde_json::json!({ "n_perm": 2000 });
    ComparisonConfig::from_json(&json.to_string()).unwrap()
}

/// Ground truth of [`planted_recording`].
pub struct Planted {
    pub broken_channels: Vec<usize>,
    /// Positions among the training trials that carry a burst.
    pub train_trials: Vec<usize>,
    pub n_train_events: usize,
    pub n_test_events: usize,
    pub test_bursts: usize,
}

pub const PLANTED_WINDOW_S: f64 = 1.0;

/// 8 channels at 250 Hz with 2 broken channels and 1500 uV bursts in 5
/// training trials and 2 test trials.
pub fn planted_recording(seed: u64) -> (eegbench::eegdata::Recording, Planted) {
    use eegbench::eegdata::generate_synthetic_with_audit;
    let window = EpochWindow::new(0.0, PLANTED_WINDOW_S).unwrap();
    let mut spec = SyntheticSpec::balanced(2, 8, 250.0, 40, 1.0, window);
    spec.broken_channel_count = 2;
    spec.inter_trial_gap_s = 0.5;
    let (mut rec, audit) = generate_synthetic_with_audit(&spec, seed).unwrap();

    let n = rec.n_samples();
    let split = (0.8 * n as f64).floor() as usize;
    let len = 250;
    let train: Vec<usize> = rec.events.iter().map(|e| e.sample_index).filter(|&s| s + len <= split).collect();
    let test: Vec<usize> = rec.events.iter().map(|e| e.sample_index).filter(|&s| s >= split).collect();
    let channel = (0..8).find(|c| !audit.broken_channels.contains(c)).unwrap();
    let burst = |rec: &mut eegbench::eegdata::Recording, at: usize| {
        for j in 0..15 {
            let w = (PI * j as f64 / 14.0).sin().powi(2);
            rec.samples[[channel, at + j]] += (1500.0 * w) as f32;
        }
    };
    let train_trials = vec![2, 5, 9, 14, 20];
    for &t in &train_trials {
        burst(&mut rec, train[t] + len / 2);
    }
    for &s in test.iter().take(2) {
        burst(&mut rec, s + len / 2);
    }
    let truth = Planted {
        broken_channels: audit.broken_channels,
        train_trials,
        n_train_events: train.len(),
        n_test_events: test.len(),
        test_bursts: 2,
    };
    (rec, truth)
}

/// A completed run whose 10 balanced test trials yield `accuracy` (a multiple of 0.1).
pub fn fixture_run(example: &str, dataset: &str, arch: ArchitectureId, accuracy: f64, p_value: f64) -> RunData {
    use eegbench::training::{PredictionRecord, TrainingParams};
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let wrong = ((1.0 - accuracy) * 10.0).round() as usize;
    let predicted: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| if i < wrong { 1 - l } else { l }).collect();
    let probabilities = predicted.iter().map(|&p| if p == 0 { vec![0.75, 0.25] } else { vec![0.25, 0.75] }).collect();
    let record: RunRecord = serde_json::from_value(serde_json::json!({
        "example": example,
        "dataset": dataset,
        "architecture": arch,
        "seed": 0,
        "permutation_seed": 0,
        "status": "ok",
        "accuracy": accuracy,
        "absent_classes": [],
        "p_value": p_value,
        "hyperparameters": TrainingParams::default().with_seed(0),
    }))
    .unwrap();
    RunData {
        record,
        predictions: Some(PredictionRecord { predicted, probabilities, labels }),
    }
}

/// Writes the stats files of a hand-made package: one row of accuracies per
/// example, in canonical method order, all with the same p-value.
pub fn write_fixture_package(dir: &std::path::Path, rows: &[(&str, &str, [f64; 4])], p_value: f64) {
    let mut runs = Vec::new();
    for (ex, ds, acc) in rows {
        for (arch, a) in ArchitectureId::ALL.iter().zip(acc) {
            runs.push(fixture_run(ex, ds, *arch, *a, p_value));
        }
    }
    let agg = aggregate(&runs, &ArchitectureId::ALL, 0.05, false).unwrap();
    for (rel, bytes) in render_stats(&agg) {
        eegbench::harness::package::write_file(dir, &rel, &bytes).unwrap();
    }
}

/// Digests of every payload file, as listed in the package index.
pub fn payload_digests(dir: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    let index: eegbench::harness::ResultsIndex =
        serde_json::from_str(&std::fs::read_to_string(dir.join("results.json")).unwrap()).unwrap();
    index.files
}
