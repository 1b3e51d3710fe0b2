//! Builders for the four compared decoders.
//!
//! Inputs are `(N, 1, C, T)`: height is the electrode axis, width is time.
//! Temporal kernels are written `(1, k)` and spatial kernels `(C, 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensornn::{Activation, LayerSpec, NetworkGraph, NnError, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureId {
    Deep4,
    Shallow,
    EegnetV1,
    EegnetV2,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 4] = [
        ArchitectureId::Deep4,
        ArchitectureId::Shallow,
        ArchitectureId::EegnetV1,
        ArchitectureId::EegnetV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureId::Deep4 => "deep4",
            ArchitectureId::Shallow => "shallow",
            ArchitectureId::EegnetV1 => "eegnet_v1",
            ArchitectureId::EegnetV2 => "eegnet_v2",
        }
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureId {
    type Err = ArchError;

    fn from_str(s: &str) -> std::result::Result<Self, ArchError> {
        ArchitectureId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ArchError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("unknown architecture {0:?} (expected deep4, shallow, eegnet_v1 or eegnet_v2)")]
    UnknownArchitecture(String),
    #[error("{arch} needs at least {min} time samples, got {t}")]
    TooFewSamples { arch: ArchitectureId, t: usize, min: usize },
    #[error("{arch} needs at least {min} channels, got {c}")]
    TooFewChannels { arch: ArchitectureId, c: usize, min: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ArchError>;

fn temporal(in_maps: usize, filters: usize, len: usize, padding: Padding) -> LayerSpec {
    LayerSpec::conv(in_maps, filters, [1, len], padding)
}

fn bn(maps: usize) -> LayerSpec {
    LayerSpec::BatchNorm { maps }
}

fn act(function: Activation) -> LayerSpec {
    LayerSpec::Activation { function }
}

fn dropout(rate: f64) -> LayerSpec {
    LayerSpec::Dropout { rate }
}

fn pool_stride(max: bool, pool: [usize; 2]) -> LayerSpec {
    if max {
        LayerSpec::MaxPool { pool, stride: pool }
    } else {
        LayerSpec::AvgPool { pool, stride: pool }
    }
}

fn deep4_body(c: usize) -> Vec<LayerSpec> {
    let mut v = vec![
        temporal(1, 25, 10, Padding::Valid),
        LayerSpec::conv(25, 25, [c, 1], Padding::Valid),
        bn(25),
        act(Activation::Elu),
        pool_stride(true, [1, 3]),
    ];
    let mut maps = 25;
    for filters in [50, 100, 200] {
        v.extend([
            dropout(0.5),
            temporal(maps, filters, 10, Padding::Valid),
            bn(filters),
            act(Activation::Elu),
            pool_stride(true, [1, 3]),
        ]);
        maps = filters;
    }
    v
}

fn shallow_body(c: usize) -> Vec<LayerSpec> {
    vec![
        temporal(1, 40, 25, Padding::Valid),
        LayerSpec::conv(40, 40, [c, 1], Padding::Valid),
        bn(40),
        act(Activation::Square),
        LayerSpec::AvgPool {
            pool: [1, 75],
            stride: [1, 15],
        },
        act(Activation::Log),
        dropout(0.5),
    ]
}

fn eegnet_v1_body(c: usize) -> Vec<LayerSpec> {
    // Pools use stride equal to the window; same padding on both axes.
    vec![
        LayerSpec::conv(1, 16, [c, 1], Padding::Valid),
        bn(16),
        act(Activation::Elu),
        LayerSpec::SwapMapsHeight,
        dropout(0.25),
        LayerSpec::conv(1, 4, [2, 32], Padding::Same),
        bn(4),
        act(Activation::Elu),
        pool_stride(true, [2, 4]),
        dropout(0.25),
        LayerSpec::conv(4, 4, [8, 4], Padding::Same),
        bn(4),
        act(Activation::Elu),
        pool_stride(true, [2, 4]),
        dropout(0.25),
    ]
}

fn eegnet_v2_body(c: usize) -> Vec<LayerSpec> {
    // Separable kernel length 16 as in the original EEGNet-v2 design.
    vec![
        temporal(1, 8, 64, Padding::Same),
        bn(8),
        LayerSpec::DepthwiseConv2d {
            in_maps: 8,
            depth_multiplier: 2,
            kernel: [c, 1],
            stride: [1, 1],
            padding: Padding::Valid,
        },
        bn(16),
        act(Activation::Elu),
        pool_stride(false, [1, 4]),
        dropout(0.25),
        LayerSpec::SeparableConv2d {
            in_maps: 16,
            filters: 16,
            kernel: [1, 16],
            padding: Padding::Same,
        },
        bn(16),
        act(Activation::Elu),
        pool_stride(false, [1, 8]),
        dropout(0.25),
    ]
}

fn body(arch: ArchitectureId, c: usize) -> Vec<LayerSpec> {
    match arch {
        ArchitectureId::Deep4 => deep4_body(c),
        ArchitectureId::Shallow => shallow_body(c),
        ArchitectureId::EegnetV1 => eegnet_v1_body(c),
        ArchitectureId::EegnetV2 => eegnet_v2_body(c),
    }
}

/// Output shape of a layer stack for one sample, or `None` if it does not fit.
fn body_output(specs: &[LayerSpec], c: usize, t: usize) -> Option<[usize; 4]> {
    let mut s = [1, 1, c, t];
    for spec in specs {
        let layer = crate::tensornn::Layer::from_spec(spec).ok()?;
        s = layer.output_shape(s).ok()?;
        if s.contains(&0) {
            return None;
        }
    }
    Some(s)
}

fn min_channels(arch: ArchitectureId) -> usize {
    match arch {
        ArchitectureId::EegnetV1 => 2,
        _ => 1,
    }
}

/// Smallest number of time samples the layer stack admits.
pub fn min_time_samples(arch: ArchitectureId) -> usize {
    let floor = match arch {
        ArchitectureId::EegnetV1 => 32,
        ArchitectureId::EegnetV2 => 64,
        _ => 1,
    };
    let specs = body(arch, 2);
    (floor..)
        .find(|&t| body_output(&specs, 2, t).is_some())
        .expect("every architecture admits some length")
}

/// Layer list for `(C, T, K)`, ending in the dense classifier.
pub fn layer_specs(arch: ArchitectureId, c: usize, t: usize, k: usize) -> Result<Vec<LayerSpec>> {
    if k < 2 {
        return Err(ArchError::TooFewClasses(k));
    }
    let min_c = min_channels(arch);
    if c < min_c {
        return Err(ArchError::TooFewChannels { arch, c, min: min_c });
    }
    let min = min_time_samples(arch);
    let mut specs = body(arch, c);
    let out = match body_output(&specs, c, t) {
        Some(s) if t >= min => s,
        _ => return Err(ArchError::TooFewSamples { arch, t, min }),
    };
    specs.push(LayerSpec::Dense {
        inputs: out[1] * out[2] * out[3],
        outputs: k,
    });
    Ok(specs)
}

/// Builds and initializes a network; identical arguments give identical parameters.
pub fn build(arch: ArchitectureId, c: usize, t: usize, k: usize, seed: u64) -> Result<NetworkGraph> {
    let specs = layer_specs(arch, c, t, k)?;
    let mut net = NetworkGraph::new([1, c, t], k, &specs)?;
    net.init(seed);
    Ok(net)
}

pub fn build_deep4(c: usize, t: usize, k: usize, seed: u64) -> Result<NetworkGraph> {
    build(ArchitectureId::Deep4, c, t, k, seed)
}

pub fn build_shallow(c: usize, t: usize, k: usize, seed: u64) -> Result<NetworkGraph> {
    build(ArchitectureId::Shallow, c, t, k, seed)
}

pub fn build_eegnet_v1(c: usize, t: usize, k: usize, seed: u64) -> Result<NetworkGraph> {
    build(ArchitectureId::EegnetV1, c, t, k, seed)
}

pub fn build_eegnet_v2(c: usize, t: usize, k: usize, seed: u64) -> Result<NetworkGraph> {
    build(ArchitectureId::EegnetV2, c, t, k, seed)
}

/// Learnable parameter total and per-layer breakdown.
pub fn param_count(net: &NetworkGraph) -> (usize, Vec<(&'static str, usize)>) {
    (net.param_count(), net.layer_param_counts())
}
