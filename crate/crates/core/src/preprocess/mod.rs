//! Uniform preprocessing: band-pass, decimation, chronological split,
//! broken-channel removal, artifact-trial rejection and standardization.
//!
//! The order is fixed; see [`run_pipeline`].

pub mod filter;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eegdata::{self, EegDataError, EpochWindow, EventMarker, Recording, TrialSet};

pub use filter::{butter_bandpass, Biquad, SosFilter};

/// Butterworth prototype order; forward-backward doubles the effective order.
pub const FILTER_ORDER: usize = 3;
/// Floor for per-channel variance in [`standardize`], in µV².
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("band edges {low} - {high} Hz must satisfy 0 < low < high < {nyquist} Hz")]
    BandEdges { low: f64, high: f64, nyquist: f64 },
    #[error("cannot decimate {from} Hz to {to} Hz: ratio is not an integer")]
    NonIntegerRatio { from: f64, to: f64 },
    #[error("test fraction {0} must lie in (0, 1)")]
    TestFraction(f64),
    #[error("split at sample {split} of {n_samples} leaves an empty {side} side")]
    EmptySide {
        split: usize,
        n_samples: usize,
        side: &'static str,
    },
    #[error("all {0} channels are broken")]
    AllChannelsBroken(usize),
    #[error("channel mask covers {mask} channels but the recording has {recording}")]
    MaskMismatch { mask: usize, recording: usize },
    #[error("all {0} trials contain samples over the amplitude threshold")]
    AllTrialsRejected(usize),
    #[error("invalid cleaning thresholds: {0}")]
    Thresholds(String),
    #[error("{side} split holds no trials")]
    NoTrials { side: &'static str },
    #[error("train and test trial shapes differ")]
    ShapeMismatch,
    #[error(transparent)]
    Data(#[from] EegDataError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleaningThresholds {
    #[serde(default = "default_amplitude")]
    pub amplitude_uv: f64,
    #[serde(default = "default_broken_fraction")]
    pub broken_fraction: f64,
}

fn default_amplitude() -> f64 {
    800.0
}

fn default_broken_fraction() -> f64 {
    0.20
}

impl Default for CleaningThresholds {
    fn default() -> Self {
        CleaningThresholds {
            amplitude_uv: default_amplitude(),
            broken_fraction: default_broken_fraction(),
        }
    }
}

impl CleaningThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_uv.is_finite() && self.amplitude_uv > 0.0) {
            return Err(PreprocessError::Thresholds("amplitude must be positive".into()));
        }
        if !(self.broken_fraction > 0.0 && self.broken_fraction < 1.0) {
            return Err(PreprocessError::Thresholds(
                "broken fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMask {
    pub kept_indices: Vec<usize>,
    pub removed_indices: Vec<usize>,
}

impl ChannelMask {
    pub fn identity(n_channels: usize) -> Self {
        ChannelMask {
            kept_indices: (0..n_channels).collect(),
            removed_indices: vec![],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.kept_indices.len() + self.removed_indices.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Recording,
    pub test: Recording,
    pub split_sample: usize,
    /// Events whose window (or marker) crosses the split point.
    pub straddling_dropped: usize,
}

impl SplitResult {
    pub fn test_is_empty(&self) -> bool {
        self.test.events.is_empty()
    }

    pub fn train_is_empty(&self) -> bool {
        self.train.events.is_empty()
    }
}

/// Zero-phase band-pass applied to every channel.
pub fn bandpass_filter(rec: &Recording, low_hz: f64, high_hz: f64) -> Result<Recording> {
    let nyquist = rec.sampling_rate_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(PreprocessError::BandEdges {
            low: low_hz,
            high: high_hz,
            nyquist,
        });
    }
    let sos = butter_bandpass(FILTER_ORDER, low_hz, high_hz, rec.sampling_rate_hz);
    let mut out = rec.clone();
    for mut row in out.samples.rows_mut() {
        let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let y = sos.filtfilt(&x);
        for (dst, v) in row.iter_mut().zip(y) {
            *dst = v as f32;
        }
    }
    Ok(out)
}

/// Keeps every k-th sample, `k = rate / target_hz`.
pub fn downsample(rec: &Recording, target_hz: f64) -> Result<Recording> {
    let ratio = rec.sampling_rate_hz / target_hz;
    let k = ratio.round();
    if !(target_hz > 0.0 && k >= 1.0 && (ratio - k).abs() <= 1e-9 * ratio) {
        return Err(PreprocessError::NonIntegerRatio {
            from: rec.sampling_rate_hz,
            to: target_hz,
        });
    }
    let k = k as usize;
    if k == 1 {
        return Ok(rec.clone());
    }
    let samples = rec.samples.slice(ndarray::s![.., ..;k]).to_owned();
    let events = rec
        .events
        .iter()
        .map(|e| EventMarker {
            sample_index: e.sample_index / k,
            label: e.label,
        })
        .collect();
    Ok(Recording {
        subject_id: rec.subject_id.clone(),
        paradigm: rec.paradigm.clone(),
        sampling_rate_hz: target_hz,
        channels: rec.channels.clone(),
        samples,
        events,
    })
}

/// Chronological split; the final `test_fraction` of the recording is test data.
///
/// An event goes to the side that holds both its marker and its full epoch
/// window; events crossing the split point are dropped.
pub fn split_train_test(rec: &Recording, test_fraction: f64, window: &EpochWindow) -> Result<SplitResult> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PreprocessError::TestFraction(test_fraction));
    }
    window.validate()?;
    let n = rec.n_samples();
    let split = ((1.0 - test_fraction) * n as f64).floor() as usize;
    if split == 0 || split >= n {
        return Err(PreprocessError::EmptySide {
            split,
            n_samples: n,
            side: if split == 0 { "train" } else { "test" },
        });
    }
    let rate = rec.sampling_rate_hz;
    let mut train_events = Vec::new();
    let mut test_events = Vec::new();
    let mut straddling = 0;
    for ev in &rec.events {
        let (start, end) = window.span(ev.sample_index, rate);
        let lo = start.min(ev.sample_index as i64);
        let hi = end.max(ev.sample_index as i64 + 1);
        if hi <= split as i64 {
            train_events.push(*ev);
        } else if lo >= split as i64 {
            test_events.push(EventMarker {
                sample_index: ev.sample_index - split,
                label: ev.label,
            });
        } else {
            straddling += 1;
        }
    }
    let part = |range: std::ops::Range<usize>, events: Vec<EventMarker>| Recording {
        subject_id: rec.subject_id.clone(),
        paradigm: rec.paradigm.clone(),
        sampling_rate_hz: rate,
        channels: rec.channels.clone(),
        samples: rec.samples.slice(ndarray::s![.., range]).to_owned(),
        events,
    };
    Ok(SplitResult {
        train: part(0..split, train_events),
        test: part(split..n, test_events),
        split_sample: split,
        straddling_dropped: straddling,
    })
}

/// Flags channels where more than `broken_fraction` of samples exceed the
/// amplitude threshold in magnitude.
pub fn mark_broken_channels(train: &Recording, th: &CleaningThresholds) -> Result<ChannelMask> {
    th.validate()?;
    let n = train.n_samples();
    if n == 0 {
        return Err(PreprocessError::NoTrials { side: "train" });
    }
    let mut mask = ChannelMask {
        kept_indices: vec![],
        removed_indices: vec![],
    };
    for (i, row) in train.samples.rows().into_iter().enumerate() {
        let over = row.iter().filter(|v| (v.abs() as f64) > th.amplitude_uv).count();
        if over as f64 / n as f64 > th.broken_fraction {
            mask.removed_indices.push(i);
        } else {
            mask.kept_indices.push(i);
        }
    }
    if mask.kept_indices.is_empty() {
        return Err(PreprocessError::AllChannelsBroken(train.n_channels()));
    }
    Ok(mask)
}

pub fn apply_channel_mask(rec: &Recording, mask: &ChannelMask) -> Result<Recording> {
    let c = rec.n_channels();
    let in_range = mask
        .kept_indices
        .iter()
        .chain(&mask.removed_indices)
        .all(|&i| i < c);
    if mask.n_channels() != c || !in_range {
        return Err(PreprocessError::MaskMismatch {
            mask: mask.n_channels(),
            recording: c,
        });
    }
    let samples: Array2<f32> = rec.samples.select(Axis(0), &mask.kept_indices);
    let names = mask
        .kept_indices
        .iter()
        .map(|&i| rec.channels[i].name.clone())
        .collect();
    Ok(Recording::new(
        rec.subject_id.clone(),
        rec.paradigm.clone(),
        rec.sampling_rate_hz,
        names,
        samples,
        rec.events.clone(),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub trials: TrialSet,
    /// Positions (in the input set) of removed trials.
    pub rejected: Vec<usize>,
}

/// Removes every trial holding a sample with `|x|` over the threshold.
pub fn reject_artifact_trials(ts: &TrialSet, th: &CleaningThresholds) -> Result<Rejection> {
    th.validate()?;
    let limit = th.amplitude_uv;
    let (kept, rejected): (Vec<usize>, Vec<usize>) = (0..ts.n_trials()).partition(|&t| {
        ts.data
            .index_axis(Axis(0), t)
            .iter()
            .all(|v| (v.abs() as f64) <= limit)
    });
    if kept.is_empty() {
        return Err(PreprocessError::AllTrialsRejected(ts.n_trials()));
    }
    Ok(Rejection {
        trials: ts.select(&kept),
        rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance hit [`VARIANCE_FLOOR`].
    pub floored: Vec<usize>,
}

/// Per-channel z-scoring with statistics from the training trials only.
pub fn standardize(train: &TrialSet, test: &TrialSet) -> Result<(TrialSet, TrialSet, ChannelStats)> {
    if train.n_trials() == 0 {
        return Err(PreprocessError::NoTrials { side: "train" });
    }
    if train.data.shape()[1..] != test.data.shape()[1..] && test.n_trials() > 0 {
        return Err(PreprocessError::ShapeMismatch);
    }
    let c = train.n_channels();
    let mut mean = vec![0.0f64; c];
    let mut std = vec![0.0f64; c];
    let mut floored = vec![];
    for ch in 0..c {
        let view = train.data.index_axis(Axis(1), ch);
        let count = view.len() as f64;
        let m = view.iter().map(|&v| v as f64).sum::<f64>() / count;
        let var = view.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / count;
        let var = if var < VARIANCE_FLOOR {
            log::warn!("channel {ch} has variance {var:e}; flooring at {VARIANCE_FLOOR:e}");
            floored.push(ch);
            VARIANCE_FLOOR
        } else {
            var
        };
        mean[ch] = m;
        std[ch] = var.sqrt();
    }
    let apply = |ts: &TrialSet| {
        let mut out = ts.clone();
        for (ch, mut lane) in out.data.axis_iter_mut(Axis(1)).enumerate() {
            lane.mapv_inplace(|v| ((v as f64 - mean[ch]) / std[ch]) as f32);
        }
        out
    };
    let tr = apply(train);
    let te = apply(test);
    Ok((tr, te, ChannelStats { mean, std, floored }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessParams {
    #[serde(default = "default_low")]
    pub low_hz: f64,
    #[serde(default = "default_high")]
    pub high_hz: f64,
    #[serde(default = "default_target")]
    pub target_hz: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_low() -> f64 {
    0.5
}
fn default_high() -> f64 {
    120.0
}
fn default_target() -> f64 {
    250.0
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            low_hz: default_low(),
            high_hz: default_high(),
            target_hz: default_target(),
            test_fraction: default_test_fraction(),
            standardize: true,
        }
    }
}

/// One applied step with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub step: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<PipelineStep>,
    pub removed_channels: Vec<String>,
    pub split_sample: usize,
    pub straddling_events_dropped: usize,
    pub train_events_out_of_bounds: usize,
    pub test_events_out_of_bounds: usize,
    pub rejected_train_trials: Vec<usize>,
    pub n_train_trials: usize,
    pub n_test_trials: usize,
    pub channel_stats: Option<ChannelStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub train: TrialSet,
    pub test: TrialSet,
    /// Cleaned training trials before standardization, in µV.
    pub train_raw: TrialSet,
    pub provenance: Provenance,
}

/// bandpass → downsample → split → channel mask → epoch → reject (train) →
/// standardize.
pub fn run_pipeline(
    rec: &Recording,
    window: &EpochWindow,
    n_classes: usize,
    params: &PreprocessParams,
    th: &CleaningThresholds,
) -> Result<PipelineOutput> {
    use serde_json::json;
    let mut steps = vec![];

    let filtered = bandpass_filter(rec, params.low_hz, params.high_hz)?;
    steps.push(PipelineStep {
        step: "bandpass".into(),
        params: json!({
            "low_hz": params.low_hz,
            "high_hz": params.high_hz,
            "order": FILTER_ORDER,
            "zero_phase": true,
            "source_rate_hz": rec.sampling_rate_hz,
        }),
    });

    let down = downsample(&filtered, params.target_hz)?;
    steps.push(PipelineStep {
        step: "downsample".into(),
        params: json!({ "target_hz": params.target_hz }),
    });

    let split = split_train_test(&down, params.test_fraction, window)?;
    steps.push(PipelineStep {
        step: "split".into(),
        params: json!({
            "test_fraction": params.test_fraction,
            "split_sample": split.split_sample,
            "straddling_dropped": split.straddling_dropped,
        }),
    });
    if split.train_is_empty() {
        return Err(PreprocessError::NoTrials { side: "train" });
    }
    if split.test_is_empty() {
        return Err(PreprocessError::NoTrials { side: "test" });
    }

    let mask = mark_broken_channels(&split.train, th)?;
    let train_rec = apply_channel_mask(&split.train, &mask)?;
    let test_rec = apply_channel_mask(&split.test, &mask)?;
    let removed_channels: Vec<String> = mask
        .removed_indices
        .iter()
        .map(|&i| rec.channels[i].name.clone())
        .collect();
    steps.push(PipelineStep {
        step: "channel_mask".into(),
        params: json!({
            "amplitude_uv": th.amplitude_uv,
            "broken_fraction": th.broken_fraction,
            "removed": removed_channels,
        }),
    });

    let train_ep = eegdata::epoch_trials(&train_rec, window, n_classes)?;
    let test_ep = eegdata::epoch_trials(&test_rec, window, n_classes)?;
    steps.push(PipelineStep {
        step: "epoch".into(),
        params: json!({
            "start_offset_s": window.start_offset_s,
            "end_offset_s": window.end_offset_s,
            "train_dropped": train_ep.dropped,
            "test_dropped": test_ep.dropped,
        }),
    });

    let rejection = reject_artifact_trials(&train_ep.trials, th)?;
    steps.push(PipelineStep {
        step: "reject_trials".into(),
        params: json!({
            "amplitude_uv": th.amplitude_uv,
            "applied_to": "train",
            "rejected": rejection.rejected.len(),
        }),
    });

    let train_raw = rejection.trials;
    let (train, test, channel_stats) = if params.standardize {
        let (tr, te, stats) = standardize(&train_raw, &test_ep.trials)?;
        steps.push(PipelineStep {
            step: "standardize".into(),
            params: json!({ "fit_on": "train", "variance_floor": VARIANCE_FLOOR }),
        });
        (tr, te, Some(stats))
    } else {
        (train_raw.clone(), test_ep.trials, None)
    };

    Ok(PipelineOutput {
        provenance: Provenance {
            steps,
            removed_channels,
            split_sample: split.split_sample,
            straddling_events_dropped: split.straddling_dropped,
            train_events_out_of_bounds: train_ep.dropped,
            test_events_out_of_bounds: test_ep.dropped,
            rejected_train_trials: rejection.rejected,
            n_train_trials: train.n_trials(),
            n_test_trials: test.n_trials(),
            channel_stats,
        },
        train,
        test,
        train_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn rec(samples: Array2<f32>, rate: f64, events: Vec<EventMarker>) -> Recording {
        let names = (0..samples.nrows()).map(|i| format!("C{i}")).collect();
        Recording::new("s", "p", rate, names, samples, events).unwrap()
    }

    fn ev(sample_index: usize, label: usize) -> EventMarker {
        EventMarker { sample_index, label }
    }

    #[test]
    fn downsample_index_arithmetic() {
        let r = rec(Array2::from_shape_fn((2, 4000), |(_, t)| t as f32), 1000.0, vec![ev(400, 1), ev(403, 0)]);
        let d = downsample(&r, 250.0).unwrap();
        assert_eq!(d.n_samples(), 1000);
        assert_eq!(d.events[0].sample_index, 100);
        assert_eq!(d.events[1].sample_index, 100);
        assert_eq!(d.samples[[0, 3]], 12.0);
        assert_eq!(d.sampling_rate_hz, 250.0);

        let same = downsample(&d, 250.0).unwrap();
        assert_eq!(same, d);
        assert!(matches!(
            downsample(&r, 300.0),
            Err(PreprocessError::NonIntegerRatio { .. })
        ));
    }

    #[test]
    fn bandpass_rejects_bad_edges() {
        let r = rec(Array2::zeros((1, 100)), 250.0, vec![]);
        assert!(bandpass_filter(&r, 0.5, 125.0).is_err());
        assert!(bandpass_filter(&r, 10.0, 5.0).is_err());
        assert!(bandpass_filter(&r, 0.0, 50.0).is_err());
        let out = bandpass_filter(&r, 0.5, 120.0).unwrap();
        assert_eq!(out.samples.dim(), (1, 100));
    }

    #[test]
    fn split_point_and_sides() {
        let r = rec(Array2::zeros((1, 1000)), 100.0, vec![ev(100, 0), ev(850, 1)]);
        let w = EpochWindow::new(0.0, 1.0).unwrap();
        let s = split_train_test(&r, 0.2, &w).unwrap();
        assert_eq!(s.split_sample, 800);
        assert_eq!(s.train.n_samples(), 800);
        assert_eq!(s.test.n_samples(), 200);
        assert_eq!(s.train.events, vec![ev(100, 0)]);
        assert_eq!(s.test.events, vec![ev(50, 1)]);
    }

    #[test]
    fn event_at_boundary_goes_to_test() {
        let r = rec(Array2::zeros((1, 1000)), 100.0, vec![ev(500, 1), ev(450, 0)].into_iter().rev().collect());
        let w = EpochWindow::new(0.0, 0.5).unwrap();
        let s = split_train_test(&r, 0.5, &w).unwrap();
        assert_eq!(s.test.events, vec![ev(0, 1)]);
        assert_eq!(s.train.events, vec![ev(450, 0)]);
        assert_eq!(s.straddling_dropped, 0);
    }

    #[test]
    fn straddling_events_are_dropped() {
        let r = rec(Array2::zeros((1, 1000)), 100.0, vec![ev(790, 0)]);
        let w = EpochWindow::new(0.0, 0.5).unwrap();
        let s = split_train_test(&r, 0.2, &w).unwrap();
        assert_eq!(s.straddling_dropped, 1);
        assert!(s.train_is_empty() && s.test_is_empty());
    }

    #[test]
    fn all_events_early_flags_empty_test() {
        let r = rec(Array2::zeros((1, 1000)), 100.0, vec![ev(10, 0), ev(200, 1)]);
        let w = EpochWindow::new(0.0, 0.5).unwrap();
        let s = split_train_test(&r, 0.5, &w).unwrap();
        assert!(s.test_is_empty());
        assert!(split_train_test(&r, 1.0, &w).is_err());
        assert!(split_train_test(&r, 0.0, &w).is_err());
    }

    fn exceedance_channel(n: usize, over: usize, value: f32) -> Vec<f32> {
        (0..n).map(|t| if t < over { value } else { 1.0 }).collect()
    }

    #[test]
    fn broken_channel_threshold_is_strict() {
        let n = 1000;
        let mut data = Array2::zeros((3, n));
        data.row_mut(0).assign(&ndarray::Array1::from(exceedance_channel(n, 210, 900.0)));
        data.row_mut(1).assign(&ndarray::Array1::from(exceedance_channel(n, 200, -900.0)));
        data.row_mut(2).assign(&ndarray::Array1::from(exceedance_channel(n, 500, 800.0)));
        let mask = mark_broken_channels(&rec(data, 250.0, vec![]), &CleaningThresholds::default()).unwrap();
        assert_eq!(mask.removed_indices, vec![0]);
        assert_eq!(mask.kept_indices, vec![1, 2]);
    }

    #[test]
    fn all_broken_is_an_error() {
        let data = Array2::from_elem((2, 10), 1000.0f32);
        assert!(matches!(
            mark_broken_channels(&rec(data, 250.0, vec![]), &CleaningThresholds::default()),
            Err(PreprocessError::AllChannelsBroken(2))
        ));
    }

    #[test]
    fn channel_mask_application() {
        let data = Array2::from_shape_fn((8, 5), |(c, t)| (c * 10 + t) as f32);
        let r = rec(data, 250.0, vec![ev(1, 0)]);
        assert_eq!(apply_channel_mask(&r, &ChannelMask::identity(8)).unwrap(), r);

        let mask = ChannelMask {
            kept_indices: vec![0, 2, 3, 4, 6, 7],
            removed_indices: vec![1, 5],
        };
        let out = apply_channel_mask(&r, &mask).unwrap();
        assert_eq!(out.samples.nrows(), 6);
        assert_eq!(out.channel_names(), vec!["C0", "C2", "C3", "C4", "C6", "C7"]);
        assert_eq!(out.samples[[1, 0]], 20.0);
        assert!(apply_channel_mask(&r, &ChannelMask::identity(6)).is_err());
    }

    fn trials(values: &[f32]) -> TrialSet {
        let data = Array3::from_shape_fn((values.len(), 2, 4), |(t, c, s)| if c == 1 && s == 2 { values[t] } else { 0.0 });
        TrialSet::new(data, (0..values.len()).map(|i| i % 2).collect(), 2, 250.0).unwrap()
    }

    #[test]
    fn artifact_rejection_is_strict_over_threshold() {
        let th = CleaningThresholds::default();
        let out = reject_artifact_trials(&trials(&[801.0, 800.0, -800.5, 5.0]), &th).unwrap();
        assert_eq!(out.rejected, vec![0, 2]);
        assert_eq!(out.trials.labels, vec![1, 1]);

        let clean = trials(&[1.0, 2.0]);
        let out = reject_artifact_trials(&clean, &th).unwrap();
        assert!(out.rejected.is_empty());
        assert_eq!(out.trials, clean);

        assert!(matches!(
            reject_artifact_trials(&trials(&[900.0]), &th),
            Err(PreprocessError::AllTrialsRejected(1))
        ));
    }

    #[test]
    fn standardize_uses_training_statistics() {
        // channel 0: values 3 and 7 -> mean 5, std 2
        let train = TrialSet::new(
            Array3::from_shape_fn((2, 2, 3), |(t, c, _)| if c == 0 { [3.0, 7.0][t] } else { 4.0 }),
            vec![0, 1],
            2,
            250.0,
        )
        .unwrap();
        let test = TrialSet::new(Array3::from_elem((1, 2, 3), 9.0), vec![0], 2, 250.0).unwrap();
        let (tr, te, stats) = standardize(&train, &test).unwrap();
        assert!((stats.mean[0] - 5.0).abs() < 1e-12);
        assert!((stats.std[0] - 2.0).abs() < 1e-12);
        let lane = tr.data.index_axis(Axis(1), 0);
        let m = lane.iter().map(|&v| v as f64).sum::<f64>() / 6.0;
        let s = (lane.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        assert_eq!(te.data[[0, 0, 0]], 2.0);
        // constant channel is floored, output finite
        assert_eq!(stats.floored, vec![1]);
        assert!(tr.data.iter().all(|v| v.is_finite()));
    }
}
