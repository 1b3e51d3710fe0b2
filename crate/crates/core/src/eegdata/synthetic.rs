//! Synthetic paradigm generator.
//!
//! Background activity is a sum of three AR(1) processes (a crude 1/f-like
//! spectrum). Each trial adds a Hann-tapered sinusoid at a class-specific
//! carrier on a class-specific block of `ceil(C / 4)` channels. Optional
//! large-amplitude bursts and broken channels exercise the cleaning rules.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EegDataError, EpochWindow, EventMarker, Recording, Result};

const AR_POLES: [f64; 3] = [0.5, 0.9, 0.99];
const ARTIFACT_PEAK_UV: f64 = 1500.0;
const ARTIFACT_DURATION_S: f64 = 0.06;
const BROKEN_AMPLITUDE_UV: f64 = 2000.0;
const BROKEN_FREQ_HZ: f64 = 7.3;
const MAX_DURATION_S: f64 = 24.0 * 3600.0;
const MAX_VALUES: f64 = (1u64 << 31) as f64;
// mean of hann^2 over its support
const HANN_POWER: f64 = 3.0 / 8.0;

fn default_noise() -> f64 {
    10.0
}

fn default_paradigm() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_channels: usize,
    pub source_rate_hz: f64,
    pub n_trials: usize,
    pub class_balance: Vec<f64>,
    /// Class-signal power over background power, per signature channel.
    pub snr: f64,
    pub artifact_rate: f64,
    pub broken_channel_count: usize,
    pub window: EpochWindow,
    pub inter_trial_gap_s: f64,
    #[serde(default = "default_noise")]
    pub noise_std_uv: f64,
    #[serde(default = "default_paradigm")]
    pub paradigm: String,
}

impl SyntheticSpec {
    /// Balanced spec with no artifacts or broken channels.
    pub fn balanced(
        n_classes: usize,
        n_channels: usize,
        source_rate_hz: f64,
        n_trials: usize,
        snr: f64,
        window: EpochWindow,
    ) -> Self {
        SyntheticSpec {
            n_classes,
            n_channels,
            source_rate_hz,
            n_trials,
            class_balance: vec![1.0 / n_classes as f64; n_classes],
            snr,
            artifact_rate: 0.0,
            broken_channel_count: 0,
            window,
            inter_trial_gap_s: 1.0,
            noise_std_uv: default_noise(),
            paradigm: default_paradigm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EegDataError::InvalidSpec(m.to_string()));
        if self.n_classes == 0 || self.n_channels == 0 || self.n_trials == 0 {
            return bad("class, channel and trial counts must be positive");
        }
        if !(self.source_rate_hz.is_finite() && self.source_rate_hz > 0.0) {
            return bad("source rate must be positive");
        }
        if self.class_balance.len() != self.n_classes {
            return bad("class_balance length must equal n_classes");
        }
        if self.class_balance.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            return bad("class_balance entries must be positive");
        }
        if (self.class_balance.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("class_balance must sum to 1");
        }
        if !(self.snr.is_finite() && self.snr >= 0.0) {
            return bad("snr must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return bad("artifact_rate must lie in [0, 1]");
        }
        if self.broken_channel_count >= self.n_channels {
            return bad("broken_channel_count must be below n_channels");
        }
        if !(self.inter_trial_gap_s.is_finite() && self.inter_trial_gap_s >= 0.0) {
            return bad("inter_trial_gap_s must be non-negative");
        }
        if !(self.noise_std_uv.is_finite() && self.noise_std_uv >= 0.0) {
            return bad("noise_std_uv must be non-negative");
        }
        self.window.validate()
    }

    /// Sinusoid amplitude giving the requested window-averaged power ratio.
    pub fn signal_amplitude_uv(&self) -> f64 {
        self.noise_std_uv * (2.0 * self.snr / HANN_POWER).sqrt()
    }
}

/// Carrier frequency of class `k`, spread over 8-30 Hz.
pub fn class_carrier_hz(k: usize, n_classes: usize) -> f64 {
    8.0 + 22.0 * (k as f64 + 0.5) / n_classes as f64
}

/// Channels carrying the signature of class `k`.
pub fn class_channels(k: usize, n_channels: usize) -> Vec<usize> {
    let block = n_channels.div_ceil(4);
    (0..block).map(|j| (k * block + j) % n_channels).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedTrial {
    pub sample_index: usize,
    pub label: usize,
    pub carrier_hz: f64,
    pub channels: Vec<usize>,
    /// Channel and onset sample of an injected burst.
    pub artifact: Option<(usize, usize)>,
}

/// Ground truth of what the generator wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAudit {
    pub trials: Vec<InjectedTrial>,
    pub broken_channels: Vec<usize>,
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Recording> {
    generate_synthetic_with_audit(spec, seed).map(|(rec, _)| rec)
}

pub fn generate_synthetic_with_audit(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(Recording, SyntheticAudit)> {
    spec.validate()?;
    let rate = spec.source_rate_hz;
    let w = &spec.window;
    let before = (-w.start_offset_s).max(0.0);
    let after = w.end_offset_s.max(0.0);
    let period = before + after + spec.inter_trial_gap_s;
    let needed_s = spec.inter_trial_gap_s * 2.0 + period * spec.n_trials as f64;
    let limit_s = MAX_DURATION_S.min(MAX_VALUES / (spec.n_channels as f64 * rate));
    if needed_s > limit_s {
        return Err(EegDataError::InfeasiblePacking { needed_s, limit_s });
    }
    let n_samples = (needed_s * rate).ceil() as usize;
    let c = spec.n_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Array2::<f32>::zeros((c, n_samples));
    let mut noise = vec![0.0f64; n_samples];
    for ch in 0..c {
        pink_noise(&mut rng, spec.noise_std_uv, &mut noise);
        for (dst, &v) in samples.row_mut(ch).iter_mut().zip(&noise) {
            *dst = v as f32;
        }
    }

    let labels = draw_labels(&mut rng, &spec.class_balance, spec.n_trials);
    let amplitude = spec.signal_amplitude_uv();
    let win_start = w.start_samples(rate);
    let win_len = w.len_samples(rate);
    let burst_len = ((ARTIFACT_DURATION_S * rate).round() as usize).max(3);

    let signature_channels: Vec<Vec<usize>> =
        (0..spec.n_classes).map(|k| class_channels(k, c)).collect();
    let broken = pick_broken(&mut rng, spec, &signature_channels);

    let mut trials = Vec::with_capacity(spec.n_trials);
    for (i, &label) in labels.iter().enumerate() {
        let event_s = spec.inter_trial_gap_s + before + period * i as f64;
        let event = (event_s * rate).round() as usize;
        let start = (event as i64 + win_start) as usize;
        let carrier = class_carrier_hz(label, spec.n_classes);
        let phase = rng.random::<f64>() * 2.0 * PI;
        if amplitude > 0.0 {
            for &ch in &signature_channels[label] {
                let mut row = samples.row_mut(ch);
                for j in 0..win_len {
                    let taper = hann(j, win_len);
                    let t = j as f64 / rate;
                    row[start + j] += (amplitude * taper * (2.0 * PI * carrier * t + phase).sin()) as f32;
                }
            }
        }
        let artifact = if rng.random::<f64>() < spec.artifact_rate {
            let clean: Vec<usize> = (0..c).filter(|ch| !broken.contains(ch)).collect();
            let ch = clean[rng.random_range(0..clean.len())];
            let margin = win_len / 10;
            let lo = start + margin;
            let hi = (start + win_len).saturating_sub(margin + burst_len).max(lo + 1);
            let onset = rng.random_range(lo..hi);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut row = samples.row_mut(ch);
            for j in 0..burst_len {
                row[onset + j] += (sign * ARTIFACT_PEAK_UV * hann(j, burst_len)) as f32;
            }
            Some((ch, onset))
        } else {
            None
        };
        trials.push(InjectedTrial {
            sample_index: event,
            label,
            carrier_hz: carrier,
            channels: signature_channels[label].clone(),
            artifact,
        });
    }

    for &ch in &broken {
        let phase = rng.random::<f64>() * 2.0 * PI;
        for (t, v) in samples.row_mut(ch).iter_mut().enumerate() {
            let x = BROKEN_AMPLITUDE_UV * (2.0 * PI * BROKEN_FREQ_HZ * t as f64 / rate + phase).sin();
            *v += x as f32;
        }
    }

    let events = trials
        .iter()
        .map(|t| EventMarker {
            sample_index: t.sample_index,
            label: t.label,
        })
        .collect();
    let names = (0..c).map(|i| format!("Ch{i:03}")).collect();
    let rec = Recording::new(
        format!("synth-{seed}"),
        spec.paradigm.clone(),
        rate,
        names,
        samples,
        events,
    )?;
    Ok((
        rec,
        SyntheticAudit {
            trials,
            broken_channels: broken,
        },
    ))
}

fn hann(j: usize, len: usize) -> f64 {
    if len < 2 {
        return 1.0;
    }
    let x = (PI * j as f64 / (len - 1) as f64).sin();
    x * x
}

fn pink_noise(rng: &mut ChaCha8Rng, std: f64, out: &mut [f64]) {
    let scale = std / (AR_POLES.len() as f64).sqrt();
    let mut state: Vec<f64> = AR_POLES.iter().map(|_| rng.sample(StandardNormal)).collect();
    for v in out.iter_mut() {
        let mut acc = 0.0;
        for (s, &a) in state.iter_mut().zip(&AR_POLES) {
            let e: f64 = rng.sample(StandardNormal);
            *s = a * *s + (1.0 - a * a).sqrt() * e;
            acc += *s;
        }
        *v = acc * scale;
    }
}

/// Exact class counts by largest remainder, in shuffled order.
fn draw_labels(rng: &mut ChaCha8Rng, balance: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = balance.iter().map(|b| b * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..balance.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &m)| std::iter::repeat_n(k, m))
        .collect();
    labels.shuffle(rng);
    labels
}

fn pick_broken(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, signature: &[Vec<usize>]) -> Vec<usize> {
    let used: std::collections::BTreeSet<usize> = signature.iter().flatten().copied().collect();
    let mut free: Vec<usize> = (0..spec.n_channels).filter(|c| !used.contains(c)).collect();
    let mut busy: Vec<usize> = used.into_iter().collect();
    free.shuffle(rng);
    busy.shuffle(rng);
    let mut broken: Vec<usize> = free
        .into_iter()
        .chain(busy)
        .take(spec.broken_channel_count)
        .collect();
    broken.sort_unstable();
    broken
}
