//! Mini-batch training, prediction and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architectures::ArchitectureId;
use crate::eegdata::TrialSet;
use crate::stats::{self, ClassAccuracy, StatsError};
use crate::tensornn::adam::{Adam, AdamConfig};
use crate::tensornn::loss::{cross_entropy, softmax_rows};
use crate::tensornn::{NetworkGraph, NnError, Tensor};

/// Trials per inference chunk in `predict`.
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),
    #[error("trial shape ({c}, {t}) does not match network input ({net_c}, {net_t})")]
    ShapeMismatch { c: usize, t: usize, net_c: usize, net_t: usize },
    #[error("{n_trials} training trials is fewer than the batch size {batch_size}")]
    TooFewTrials { n_trials: usize, batch_size: usize },
    #[error("class count {data} in data differs from network output {net}")]
    ClassCount { data: usize, net: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Seed-free training settings as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    /// Per-filter L2 limit on convolution and dense weights; off when absent.
    pub max_norm: Option<f64>,
}

impl Default for TrainingParams {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingParams {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 64,
            n_epochs: 100,
            max_norm: None,
        }
    }
}

impl TrainingParams {
    pub fn with_seed(self, seed: u64) -> Hyperparameters {
        Hyperparameters { params: self, seed }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam()
            .validate()
            .map_err(|e| TrainError::Hyperparameters(e.to_string()))?;
        if self.batch_size < 2 {
            return Err(TrainError::Hyperparameters("batch_size must be at least 2".into()));
        }
        if self.n_epochs < 1 {
            return Err(TrainError::Hyperparameters("n_epochs must be at least 1".into()));
        }
        if let Some(m) = self.max_norm {
            if !(m > 0.0 && m.is_finite()) {
                return Err(TrainError::Hyperparameters(format!("max_norm {m} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    #[serde(flatten)]
    pub params: TrainingParams,
    pub seed: u64,
}

impl Hyperparameters {
    pub fn new(seed: u64) -> Self {
        TrainingParams::default().with_seed(seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, weighted by size.
    pub loss: f64,
    /// Accuracy of the training-mode outputs seen during the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub architecture: Option<ArchitectureId>,
    pub net: NetworkGraph,
    pub history: Vec<EpochRecord>,
    pub hyperparameters: Hyperparameters,
}

/// Copies trials into `(N, 1, C, T)` order as f64.
pub fn trials_tensor(trials: &TrialSet, indices: &[usize]) -> Tensor {
    let (c, t) = (trials.n_channels(), trials.n_times());
    let mut data = Vec::with_capacity(indices.len() * c * t);
    for &i in indices {
        data.extend(trials.data.index_axis(ndarray::Axis(0), i).iter().map(|&v| v as f64));
    }
    Tensor::from_vec([indices.len(), 1, c, t], data).expect("sizes agree by construction")
}

fn check_shape(net: &NetworkGraph, trials: &TrialSet) -> Result<()> {
    let [_, net_c, net_t] = net.input_shape();
    let (c, t) = (trials.n_channels(), trials.n_times());
    if (c, t) != (net_c, net_t) {
        return Err(TrainError::ShapeMismatch { c, t, net_c, net_t });
    }
    Ok(())
}

/// Trains with Adam on seeded shuffles; a final batch of one trial is dropped.
///
/// Parameters are rounded to single precision on return so the saved model
/// reproduces the returned one exactly.
pub fn train(
    mut net: NetworkGraph,
    trainset: &TrialSet,
    hp: &Hyperparameters,
    architecture: Option<ArchitectureId>,
) -> Result<TrainedModel> {
    let p = hp.params;
    p.validate()?;
    check_shape(&net, trainset)?;
    if trainset.n_classes != net.n_classes() {
        return Err(TrainError::ClassCount {
            data: trainset.n_classes,
            net: net.n_classes(),
        });
    }
    let n = trainset.n_trials();
    if n < p.batch_size {
        return Err(TrainError::TooFewTrials {
            n_trials: n,
            batch_size: p.batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(p.adam())?;
    let kinds = net.layer_kinds();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(p.n_epochs);
    for epoch in 0..p.n_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (batch, idx) in order.chunks(p.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let step_err = |source| TrainError::Step { epoch, batch, source };
            let x = trials_tensor(trainset, idx);
            let labels: Vec<usize> = idx.iter().map(|&i| trainset.labels[i]).collect();
            let logits = net.forward_train(&x, &mut rng).map_err(step_err)?;
            let (loss, grad) = cross_entropy(&logits, &labels).map_err(step_err)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            let k = net.n_classes();
            for (row, &y) in logits.data().chunks(k).zip(&labels) {
                correct += usize::from(stats::argmax(row) == y);
            }
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            net.backward(&grad).map_err(step_err)?;
            opt.step(net.param_slots(), &kinds).map_err(step_err)?;
            if let Some(limit) = p.max_norm {
                net.apply_max_norm(limit);
            }
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
        });
    }
    net.round_to_f32();
    Ok(TrainedModel {
        architecture,
        net,
        history,
        hyperparameters: *hp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl PredictionRecord {
    pub fn n_classes(&self) -> usize {
        self.probabilities.first().map_or(0, Vec::len)
    }
}

/// Evaluation-mode class probabilities; ties in argmax go to the lowest class.
pub fn predict_net(net: &NetworkGraph, trials: &TrialSet) -> Result<PredictionRecord> {
    check_shape(net, trials)?;
    let n = trials.n_trials();
    let mut probabilities = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(PREDICT_CHUNK) {
        let logits = net.infer(&trials_tensor(trials, chunk))?;
        probabilities.extend(softmax_rows(&logits));
    }
    Ok(PredictionRecord {
        predicted: probabilities.iter().map(|p| stats::argmax(p)).collect(),
        probabilities,
        labels: trials.labels.clone(),
    })
}

pub fn predict(model: &TrainedModel, trials: &TrialSet) -> Result<PredictionRecord> {
    predict_net(&model.net, trials)
}

/// Class-mean accuracy with the per-class breakdown.
pub fn evaluate(preds: &PredictionRecord) -> Result<ClassAccuracy> {
    Ok(stats::class_accuracies(
        &preds.predicted,
        &preds.labels,
        preds.n_classes(),
    )?)
}
