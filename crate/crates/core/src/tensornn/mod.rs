//! Minimal CPU neural-network engine over `(N, F, H, W)` tensors of `f64`.

pub mod adam;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::conv::Padding;
pub use layers::activation::Activation;
pub use layers::{Layer, LayerSpec, ParamSlot};
pub use loss::cross_entropy;
pub use network::NetworkGraph;
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch normalization needs at least 2 samples per batch in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<NnError>,
    },
    #[error("non-finite gradient in layer {layer} parameter {param}")]
    NonFiniteGradient { layer: String, param: String },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("model file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Training mode uses batch statistics and dropout; evaluation mode does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
