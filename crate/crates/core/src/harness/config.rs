use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::architectures::ArchitectureId;
use crate::eegdata::{EpochWindow, SyntheticSpec};
use crate::preprocess::{CleaningThresholds, PreprocessParams};
use crate::stats::DEFAULT_ENUMERATION_CAP;
use crate::training::TrainingParams;

use super::{HarnessError, Result};

/// Where a dataset example comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated on the fly. Without a seed, one is derived from the master seed.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A recording directory in the container format.
    Path(String),
}

/// One decoding-task example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    /// Dataset group used by per-dataset reports; defaults to the id.
    #[serde(default)]
    pub dataset: Option<String>,
    pub source: DatasetSource,
    pub window: EpochWindow,
    pub n_classes: usize,
}

impl DatasetConfig {
    pub fn group(&self) -> &str {
        self.dataset.as_deref().unwrap_or(&self.id)
    }
}

/// Per-architecture replacements for individual training fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_norm: Option<f64>,
}

impl TrainingOverride {
    pub fn apply(&self, base: TrainingParams) -> TrainingParams {
        TrainingParams {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            n_epochs: self.n_epochs.unwrap_or(base.n_epochs),
            max_norm: self.max_norm.or(base.max_norm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsParams {
    pub n_perm: u64,
    pub alpha: f64,
    pub enumeration_cap: u64,
    /// Additionally run sign tests within each dataset group.
    pub per_dataset_sign_test: bool,
}

impl Default for StatsParams {
    fn default() -> Self {
        StatsParams {
            n_perm: 1_000_000,
            alpha: 0.05,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            per_dataset_sign_test: false,
        }
    }
}

fn default_workers() -> usize {
    1
}

/// Complete description of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub datasets: Vec<DatasetConfig>,
    pub architectures: Vec<ArchitectureId>,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub training_overrides: BTreeMap<ArchitectureId, TrainingOverride>,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub cleaning: CleaningThresholds,
    #[serde(default)]
    pub stats: StatsParams,
    pub master_seed: u64,
    /// Execution setting; not part of the resolved copy.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    /// Execution setting; not part of the resolved copy.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

impl ComparisonConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ComparisonConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.architectures.is_empty() {
            return bad("at least one architecture is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if d.id.is_empty() || d.id.contains(['/', '\\']) || d.id.starts_with('.') {
                return bad(format!("dataset id {:?} is not a valid directory name", d.id));
            }
            if !ids.insert(d.id.as_str()) {
                return bad(format!("duplicate dataset id {:?}", d.id));
            }
            if d.n_classes < 2 {
                return bad(format!("dataset {:?} needs at least 2 classes", d.id));
            }
            d.window
                .validate()
                .map_err(|e| HarnessError::Config(format!("dataset {:?}: {e}", d.id)))?;
            if let DatasetSource::Synthetic { spec, .. } = &d.source {
                spec.validate()
                    .map_err(|e| HarnessError::Config(format!("dataset {:?}: {e}", d.id)))?;
                if spec.n_classes != d.n_classes {
                    return bad(format!("dataset {:?}: spec has {} classes", d.id, spec.n_classes));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.architectures {
            if !seen.insert(a) {
                return bad(format!("architecture {a} listed twice"));
            }
        }
        for a in self.architectures.iter() {
            self.training_for(*a)
                .validate()
                .map_err(|e| HarnessError::Config(format!("{a}: {e}")))?;
        }
        let s = &self.stats;
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", s.alpha));
        }
        if s.n_perm == 0 {
            return bad("n_perm must be at least 1".into());
        }
        let p = &self.preprocess;
        if !(p.test_fraction > 0.0 && p.test_fraction < 1.0) {
            return bad(format!("test fraction {} must lie in (0, 1)", p.test_fraction));
        }
        self.cleaning.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn training_for(&self, arch: ArchitectureId) -> TrainingParams {
        self.training_overrides
            .get(&arch)
            .map_or(self.training, |o| o.apply(self.training))
    }

    /// Canonical JSON of every field that influences results.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn keyed_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of one (example, architecture) run; unaffected by other examples.
pub fn run_seed(master: u64, example: &str, arch: ArchitectureId) -> u64 {
    keyed_seed(&[b"run", &master.to_le_bytes(), example.as_bytes(), arch.name().as_bytes()])
}

/// Seed of the permutation test for one run.
pub fn permutation_seed(master: u64, example: &str, arch: ArchitectureId) -> u64 {
    keyed_seed(&[b"permutation", &master.to_le_bytes(), example.as_bytes(), arch.name().as_bytes()])
}

/// Seed for generating a synthetic example that does not fix its own.
pub fn data_seed(master: u64, example: &str) -> u64 {
    keyed_seed(&[b"data", &master.to_le_bytes(), example.as_bytes()])
}
