//! Evaluation framework for EEG deep-learning decoders.
//!
//! The crate covers the full path from a continuous recording to a
//! reproducible comparison package:
//!
//! - [`eegdata`]: recordings, trial sets, the directory container, synthetic data
//! - [`preprocess`]: band-pass, decimation, split, cleaning, standardization
//! - [`tensornn`]: a small CPU neural-network engine with Adam
//! - [`architectures`]: Deep4, Shallow, EEGNet v1 and EEGNet v2 builders
//! - [`training`]: mini-batch training, prediction and evaluation
//! - [`stats`]: class-mean accuracy, permutation and sign tests, overlaps
//! - [`harness`]: config-driven comparisons, result packages, reports, verification

pub mod eegdata;
pub mod preprocess;
pub mod tensornn;
pub mod architectures;
pub mod stats;
pub mod training;
pub mod harness;
