//! Directory container: `meta.json` plus time-major little-endian `f32` frames.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EegDataError, EventMarker, Recording, Result};

pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    subject_id: String,
    paradigm: String,
    sampling_rate_hz: f64,
    channels: Vec<String>,
    n_samples: usize,
    events: Vec<EventMarker>,
}

pub fn save_recording(rec: &Recording, dir: &Path) -> Result<()> {
    rec.validate()?;
    fs::create_dir_all(dir)?;
    let meta = Meta {
        subject_id: rec.subject_id.clone(),
        paradigm: rec.paradigm.clone(),
        sampling_rate_hz: rec.sampling_rate_hz,
        channels: rec.channel_names(),
        n_samples: rec.n_samples(),
        events: rec.events.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    json.push(b'\n');
    fs::write(dir.join(META_FILE), json)?;

    let (c, n) = rec.samples.dim();
    let mut raw = Vec::with_capacity(4 * c * n);
    for t in 0..n {
        for ch in 0..c {
            raw.extend_from_slice(&rec.samples[[ch, t]].to_le_bytes());
        }
    }
    fs::write(dir.join(DATA_FILE), raw)?;
    Ok(())
}

pub fn load_recording(dir: &Path) -> Result<Recording> {
    let meta_path = dir.join(META_FILE);
    let data_path = dir.join(DATA_FILE);
    for p in [&meta_path, &data_path] {
        if !p.is_file() {
            return Err(EegDataError::MissingFile(p.clone()));
        }
    }
    let malformed = |reason: String| EegDataError::MalformedMetadata {
        path: meta_path.clone(),
        reason,
    };
    let meta: Meta =
        serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| malformed(e.to_string()))?;
    if meta.channels.is_empty() {
        return Err(malformed("no channels declared".into()));
    }

    let raw = fs::read(&data_path)?;
    let c = meta.channels.len();
    let frame = 4 * c as u64;
    if !(raw.len() as u64).is_multiple_of(frame) {
        return Err(EegDataError::FrameSize {
            len: raw.len() as u64,
            frame,
        });
    }
    let n = raw.len() / (4 * c);
    if n != meta.n_samples {
        return Err(EegDataError::SampleCountMismatch {
            declared: meta.n_samples,
            found: n,
        });
    }
    for (index, ev) in meta.events.iter().enumerate() {
        if ev.sample_index >= n {
            return Err(EegDataError::EventOutOfRange {
                index,
                sample: ev.sample_index,
                n_samples: n,
            });
        }
    }

    let mut samples = Array2::<f32>::zeros((c, n));
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        samples[[i % c, i / c]] = v;
    }
    Recording::new(
        meta.subject_id,
        meta.paradigm,
        meta.sampling_rate_hz,
        meta.channels,
        samples,
        meta.events,
    )
}
