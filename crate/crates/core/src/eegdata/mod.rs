//! Continuous recordings, epoched trial sets, the on-disk recording container
//! and a synthetic paradigm generator.

mod container;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{load_recording, save_recording, DATA_FILE, META_FILE};
pub use synthetic::{
    class_carrier_hz, class_channels, generate_synthetic, generate_synthetic_with_audit,
    InjectedTrial, SyntheticAudit, SyntheticSpec,
};

#[derive(Debug, Error)]
pub enum EegDataError {
    #[error("missing container file {0}")]
    MissingFile(PathBuf),
    #[error("malformed metadata in {path}: {reason}")]
    MalformedMetadata { path: PathBuf, reason: String },
    #[error("raw data length {len} bytes is not a multiple of the frame size {frame} bytes")]
    FrameSize { len: u64, frame: u64 },
    #[error("raw data holds {found} samples per channel but metadata declares {declared}")]
    SampleCountMismatch { declared: usize, found: usize },
    #[error("event {index} at sample {sample} lies outside [0, {n_samples})")]
    EventOutOfRange {
        index: usize,
        sample: usize,
        n_samples: usize,
    },
    #[error("events are not sorted by sample index (event {0})")]
    EventsUnsorted(usize),
    #[error("event {index} has label {label} but only {n_classes} classes are declared")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid epoch window [{start}, {end}) s")]
    InvalidWindow { start: f64, end: f64 },
    #[error("epoch window of {window} samples is longer than the recording ({n_samples} samples)")]
    WindowTooLong { window: usize, n_samples: usize },
    #[error("recording has no events to epoch")]
    NoEvents,
    #[error("all {0} events fall outside the recording bounds for this window")]
    NoSurvivingEvents(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible trial packing: {needed_s:.1} s of recording needed, limit is {limit_s:.1} s")]
    InfeasiblePacking { needed_s: f64, limit_s: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EegDataError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarker {
    pub sample_index: usize,
    pub label: usize,
}

/// Continuous multichannel EEG in microvolts, laid out channel × time.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub paradigm: String,
    pub sampling_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
    pub samples: Array2<f32>,
    pub events: Vec<EventMarker>,
}

impl Recording {
    /// Builds a recording with channels indexed in order and checks every
    /// invariant.
    pub fn new(
        subject_id: impl Into<String>,
        paradigm: impl Into<String>,
        sampling_rate_hz: f64,
        channel_names: Vec<String>,
        samples: Array2<f32>,
        events: Vec<EventMarker>,
    ) -> Result<Self> {
        let channels = channel_names
            .into_iter()
            .enumerate()
            .map(|(index, name)| ChannelInfo { name, index })
            .collect();
        let rec = Recording {
            subject_id: subject_id.into(),
            paradigm: paradigm.into(),
            sampling_rate_hz,
            channels,
            samples,
            events,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate_hz
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(EegDataError::InvalidRecording(format!(
                "sampling rate {} Hz is not positive",
                self.sampling_rate_hz
            )));
        }
        if self.samples.nrows() != self.channels.len() {
            return Err(EegDataError::InvalidRecording(format!(
                "{} sample rows for {} channels",
                self.samples.nrows(),
                self.channels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.index != i {
                return Err(EegDataError::InvalidRecording(format!(
                    "channel {} has index {}, expected {}",
                    ch.name, ch.index, i
                )));
            }
            if !seen.insert(ch.name.as_str()) {
                return Err(EegDataError::InvalidRecording(format!(
                    "duplicate channel name {}",
                    ch.name
                )));
            }
        }
        if let Some(bad) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(EegDataError::InvalidRecording(format!(
                "non-finite sample at flat index {bad}"
            )));
        }
        let n = self.n_samples();
        for (i, ev) in self.events.iter().enumerate() {
            if ev.sample_index >= n {
                return Err(EegDataError::EventOutOfRange {
                    index: i,
                    sample: ev.sample_index,
                    n_samples: n,
                });
            }
            if i > 0 && self.events[i - 1].sample_index > ev.sample_index {
                return Err(EegDataError::EventsUnsorted(i));
            }
        }
        Ok(())
    }

    /// Checks event labels against a paradigm's class count.
    pub fn validate_labels(&self, n_classes: usize) -> Result<()> {
        for (i, ev) in self.events.iter().enumerate() {
            if ev.label >= n_classes {
                return Err(EegDataError::LabelOutOfRange {
                    index: i,
                    label: ev.label,
                    n_classes,
                });
            }
        }
        Ok(())
    }
}

/// Trial window relative to an event, in seconds; the end is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochWindow {
    pub start_offset_s: f64,
    pub end_offset_s: f64,
}

impl EpochWindow {
    pub fn new(start_offset_s: f64, end_offset_s: f64) -> Result<Self> {
        let w = EpochWindow {
            start_offset_s,
            end_offset_s,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_offset_s.is_finite()
            && self.end_offset_s.is_finite()
            && self.end_offset_s > self.start_offset_s)
        {
            return Err(EegDataError::InvalidWindow {
                start: self.start_offset_s,
                end: self.end_offset_s,
            });
        }
        Ok(())
    }

    /// Start offset in samples, rounded half away from zero.
    pub fn start_samples(&self, rate_hz: f64) -> i64 {
        (self.start_offset_s * rate_hz).round() as i64
    }

    /// Window length in samples, rounded half away from zero.
    pub fn len_samples(&self, rate_hz: f64) -> usize {
        ((self.end_offset_s - self.start_offset_s) * rate_hz).round() as usize
    }

    /// Half-open sample span `[start, end)` of the window around `event`.
    pub fn span(&self, event: usize, rate_hz: f64) -> (i64, i64) {
        let start = event as i64 + self.start_samples(rate_hz);
        (start, start + self.len_samples(rate_hz) as i64)
    }

    // Paradigm windows used by the original recordings.
    pub const MOTOR: EpochWindow = EpochWindow {
        start_offset_s: 0.0,
        end_offset_s: 4.0,
    };
    pub const ERN: EpochWindow = EpochWindow {
        start_offset_s: -0.5,
        end_offset_s: 1.5,
    };
    pub const OBSERVATION: EpochWindow = EpochWindow {
        start_offset_s: 2.5,
        end_offset_s: 5.0,
    };
    pub const SEMANTIC: EpochWindow = EpochWindow {
        start_offset_s: 0.0,
        end_offset_s: 3.0,
    };
}

/// Epoched trials, trial × channel × time, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub data: Array3<f32>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub sampling_rate_hz: f64,
}

impl TrialSet {
    pub fn new(
        data: Array3<f32>,
        labels: Vec<usize>,
        n_classes: usize,
        sampling_rate_hz: f64,
    ) -> Result<Self> {
        let ts = TrialSet {
            data,
            labels,
            n_classes,
            sampling_rate_hz,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(EegDataError::InvalidRecording("zero classes".into()));
        }
        if self.labels.len() != self.data.shape()[0] {
            return Err(EegDataError::InvalidRecording(format!(
                "{} labels for {} trials",
                self.labels.len(),
                self.data.shape()[0]
            )));
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.n_classes)
        {
            return Err(EegDataError::LabelOutOfRange {
                index: i,
                label: l,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_times(&self) -> usize {
        self.data.shape()[2]
    }

    /// Keeps the trials at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> TrialSet {
        let data = self.data.select(ndarray::Axis(0), indices);
        TrialSet {
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            sampling_rate_hz: self.sampling_rate_hz,
        }
    }
}

/// Outcome of cutting a recording into trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoched {
    pub trials: TrialSet,
    /// Events whose window left the recording.
    pub dropped: usize,
}

/// Cuts one trial per event whose full window lies inside the recording.
pub fn epoch_trials(rec: &Recording, window: &EpochWindow, n_classes: usize) -> Result<Epoched> {
    window.validate()?;
    let rate = rec.sampling_rate_hz;
    let len = window.len_samples(rate);
    let n = rec.n_samples();
    if len == 0 {
        return Err(EegDataError::InvalidWindow {
            start: window.start_offset_s,
            end: window.end_offset_s,
        });
    }
    if len > n {
        return Err(EegDataError::WindowTooLong {
            window: len,
            n_samples: n,
        });
    }
    if rec.events.is_empty() {
        return Err(EegDataError::NoEvents);
    }
    rec.validate_labels(n_classes)?;

    let kept: Vec<(usize, &EventMarker)> = rec
        .events
        .iter()
        .filter_map(|ev| {
            let (start, end) = window.span(ev.sample_index, rate);
            (start >= 0 && end <= n as i64).then_some((start as usize, ev))
        })
        .collect();
    if kept.is_empty() {
        return Err(EegDataError::NoSurvivingEvents(rec.events.len()));
    }

    let c = rec.n_channels();
    let mut data = Array3::<f32>::zeros((kept.len(), c, len));
    for (t, (start, _)) in kept.iter().enumerate() {
        data.slice_mut(s![t, .., ..])
            .assign(&rec.samples.slice(s![.., *start..*start + len]));
    }
    let labels = kept.iter().map(|(_, ev)| ev.label).collect();
    Ok(Epoched {
        trials: TrialSet::new(data, labels, n_classes, rate)?,
        dropped: rec.events.len() - kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_times: usize,
    pub class_counts: BTreeMap<usize, usize>,
    /// Largest over smallest class count; `None` with fewer than two classes present.
    pub imbalance_ratio: Option<f64>,
    pub ratio_undefined: bool,
}

pub fn dataset_summary(ts: &TrialSet) -> DatasetSummary {
    let mut class_counts = BTreeMap::new();
    for &l in &ts.labels {
        *class_counts.entry(l).or_insert(0usize) += 1;
    }
    let imbalance_ratio = if class_counts.len() >= 2 {
        let max = *class_counts.values().max().unwrap();
        let min = *class_counts.values().min().unwrap();
        Some(max as f64 / min as f64)
    } else {
        None
    };
    DatasetSummary {
        n_trials: ts.n_trials(),
        n_channels: ts.n_channels(),
        n_times: ts.n_times(),
        class_counts,
        ratio_undefined: imbalance_ratio.is_none(),
        imbalance_ratio,
    }
}
