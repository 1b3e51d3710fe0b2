pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Shape, Tensor};
use super::{Mode, Result};
use activation::Activation;
use batchnorm::BatchNorm;
use conv::{Conv2d, Padding, SeparableConv2d};
use dense::Dense;
use dropout::Dropout;
use pool::{Pool, PoolKind};

/// Serializable hyperparameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        in_maps: usize,
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
        bias: bool,
    },
    DepthwiseConv2d {
        in_maps: usize,
        depth_multiplier: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    },
    SeparableConv2d {
        in_maps: usize,
        filters: usize,
        kernel: [usize; 2],
        padding: Padding,
    },
    BatchNorm {
        maps: usize,
    },
    Activation {
        function: Activation,
    },
    MaxPool {
        pool: [usize; 2],
        stride: [usize; 2],
    },
    AvgPool {
        pool: [usize; 2],
        stride: [usize; 2],
    },
    Dropout {
        rate: f64,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Exchanges the feature-map and height axes.
    SwapMapsHeight,
}

impl LayerSpec {
    pub fn conv(in_maps: usize, filters: usize, kernel: [usize; 2], padding: Padding) -> Self {
        LayerSpec::Conv2d {
            in_maps,
            filters,
            kernel,
            stride: [1, 1],
            padding,
            bias: true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerSpec::SeparableConv2d { .. } => "separable_conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::SwapMapsHeight => "swap_maps_height",
        }
    }
}

/// A named mutable parameter with its current gradient.
pub struct ParamSlot<'a> {
    pub layer: usize,
    pub name: &'static str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    DepthwiseConv2d(Conv2d),
    SeparableConv2d(SeparableConv2d),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Pool(Pool),
    Dropout(Dropout),
    Dense(Dense),
    SwapMapsHeight,
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec) -> Result<Layer> {
        Ok(match *spec {
            LayerSpec::Conv2d {
                in_maps,
                filters,
                kernel,
                stride,
                padding,
                bias,
            } => Layer::Conv2d(Conv2d::new(in_maps, filters, 1, kernel, stride, padding, bias)?),
            LayerSpec::DepthwiseConv2d {
                in_maps,
                depth_multiplier,
                kernel,
                stride,
                padding,
            } => Layer::DepthwiseConv2d(Conv2d::depthwise(in_maps, depth_multiplier, kernel, stride, padding)?),
            LayerSpec::SeparableConv2d {
                in_maps,
                filters,
                kernel,
                padding,
            } => Layer::SeparableConv2d(SeparableConv2d::new(in_maps, filters, kernel, padding)?),
            LayerSpec::BatchNorm { maps } => Layer::BatchNorm(BatchNorm::new(maps)),
            LayerSpec::Activation { function } => Layer::Activation(function),
            LayerSpec::MaxPool { pool, stride } => Layer::Pool(Pool::new(PoolKind::Max, pool, stride)?),
            LayerSpec::AvgPool { pool, stride } => Layer::Pool(Pool::new(PoolKind::Mean, pool, stride)?),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(inputs, outputs)?),
            LayerSpec::SwapMapsHeight => Layer::SwapMapsHeight,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_maps: c.in_maps,
                filters: c.out_maps,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                bias: c.bias.is_some(),
            },
            Layer::DepthwiseConv2d(c) => LayerSpec::DepthwiseConv2d {
                in_maps: c.in_maps,
                depth_multiplier: c.out_maps / c.in_maps,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::SeparableConv2d(s) => LayerSpec::SeparableConv2d {
                in_maps: s.depthwise.in_maps,
                filters: s.pointwise.out_maps,
                kernel: s.depthwise.kernel,
                padding: s.depthwise.padding,
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm { maps: b.maps },
            Layer::Activation(a) => LayerSpec::Activation { function: *a },
            Layer::Pool(p) => match p.kind {
                PoolKind::Max => LayerSpec::MaxPool {
                    pool: p.pool,
                    stride: p.stride,
                },
                PoolKind::Mean => LayerSpec::AvgPool {
                    pool: p.pool,
                    stride: p.stride,
                },
            },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::SwapMapsHeight => LayerSpec::SwapMapsHeight,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => c.output_shape(input),
            Layer::SeparableConv2d(s) => s.output_shape(input),
            Layer::BatchNorm(b) => b.output_shape(input),
            Layer::Activation(_) | Layer::Dropout(_) => Ok(input),
            Layer::Pool(p) => p.output_shape(input),
            Layer::Dense(d) => d.output_shape(input),
            Layer::SwapMapsHeight => Ok([input[0], input[2], input[1], input[3]]),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => c.init(rng),
            Layer::SeparableConv2d(s) => {
                s.depthwise.init(rng);
                s.pointwise.init(rng);
            }
            Layer::Dense(d) => d.init(rng),
            Layer::BatchNorm(b) => *b = BatchNorm::new(b.maps),
            _ => {}
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => c.param_count(),
            Layer::SeparableConv2d(s) => s.param_count(),
            Layer::BatchNorm(b) => b.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    /// Forward pass; `aux` receives max-pool argmax indices in train mode.
    pub fn forward<R: Rng>(
        &mut self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
        aux: &mut Vec<usize>,
    ) -> Result<Tensor> {
        match (self, mode) {
            (Layer::Conv2d(c) | Layer::DepthwiseConv2d(c), _) => c.forward(x),
            (Layer::SeparableConv2d(s), _) => s.forward(x),
            (Layer::BatchNorm(b), Mode::Train) => b.forward_train(x),
            (Layer::BatchNorm(b), Mode::Eval) => b.forward_eval(x),
            (Layer::Activation(a), _) => Ok(a.forward(x)),
            (Layer::Pool(p), Mode::Train) => {
                let (y, idx) = p.forward_with_argmax(x)?;
                *aux = idx;
                Ok(y)
            }
            (Layer::Pool(p), Mode::Eval) => p.forward(x),
            (Layer::Dropout(d), Mode::Train) => Ok(d.forward_train(x, rng)),
            (Layer::Dropout(_), Mode::Eval) => Ok(x.clone()),
            (Layer::Dense(d), _) => d.forward(x),
            (Layer::SwapMapsHeight, _) => Ok(swap_maps_height(x)),
        }
    }

    /// Eval-mode forward without side effects.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => c.forward(x),
            Layer::SeparableConv2d(s) => s.forward(x),
            Layer::BatchNorm(b) => b.forward_eval(x),
            Layer::Activation(a) => Ok(a.forward(x)),
            Layer::Pool(p) => p.forward(x),
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Dense(d) => d.forward(x),
            Layer::SwapMapsHeight => Ok(swap_maps_height(x)),
        }
    }

    /// Backward pass of the train-mode transform; stores parameter gradients
    /// in the layer and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, aux: &[usize]) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => {
                let g = c.backward(x, grad_out)?;
                c.grad_weight = g.weight;
                c.grad_bias = g.bias;
                Ok(g.input)
            }
            Layer::SeparableConv2d(s) => {
                let (input, dw, pw) = s.backward(x, grad_out)?;
                s.depthwise.grad_weight = dw.weight;
                s.pointwise.grad_weight = pw.weight;
                s.pointwise.grad_bias = pw.bias;
                Ok(input)
            }
            Layer::BatchNorm(b) => {
                let g = b.backward(x, grad_out)?;
                b.grad_gamma = g.gamma;
                b.grad_beta = g.beta;
                Ok(g.input)
            }
            Layer::Activation(a) => a.backward(x, grad_out),
            Layer::Pool(p) => p.backward(x, grad_out, Some(aux)),
            Layer::Dropout(d) => d.backward(grad_out),
            Layer::Dense(d) => {
                let g = d.backward(x, grad_out)?;
                d.grad_weight = g.weight;
                d.grad_bias = g.bias;
                Ok(g.input)
            }
            Layer::SwapMapsHeight => Ok(swap_maps_height(grad_out)),
        }
    }

    /// Learnable parameters in serialization order.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => {
                let mut v = vec![c.weight.as_slice()];
                if let Some(b) = &c.bias {
                    v.push(b);
                }
                v
            }
            Layer::SeparableConv2d(s) => {
                let mut v = vec![s.depthwise.weight.as_slice(), s.pointwise.weight.as_slice()];
                if let Some(b) = &s.pointwise.bias {
                    v.push(b);
                }
                v
            }
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn param_slots(&mut self, layer: usize) -> Vec<ParamSlot<'_>> {
        fn slot<'a>(layer: usize, name: &'static str, value: &'a mut [f64], grad: &'a [f64]) -> ParamSlot<'a> {
            ParamSlot { layer, name, value, grad }
        }
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => {
                let mut v = vec![slot(layer, "weight", &mut c.weight, &c.grad_weight)];
                if let (Some(b), Some(gb)) = (&mut c.bias, &c.grad_bias) {
                    v.push(slot(layer, "bias", b, gb));
                }
                v
            }
            Layer::SeparableConv2d(s) => {
                let SeparableConv2d { depthwise, pointwise } = s;
                let mut v = vec![
                    slot(layer, "depthwise_weight", &mut depthwise.weight, &depthwise.grad_weight),
                    slot(layer, "pointwise_weight", &mut pointwise.weight, &pointwise.grad_weight),
                ];
                if let (Some(b), Some(gb)) = (&mut pointwise.bias, &pointwise.grad_bias) {
                    v.push(slot(layer, "pointwise_bias", b, gb));
                }
                v
            }
            Layer::BatchNorm(b) => vec![
                slot(layer, "gamma", &mut b.gamma, &b.grad_gamma),
                slot(layer, "beta", &mut b.beta, &b.grad_beta),
            ],
            Layer::Dense(d) => vec![
                slot(layer, "weight", &mut d.weight, &d.grad_weight),
                slot(layer, "bias", &mut d.bias, &d.grad_bias),
            ],
            _ => vec![],
        }
    }

    /// Non-learnable state that must be saved with the model.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            _ => vec![],
        }
    }

    /// Parameters followed by buffers, mutably, in serialization order.
    pub fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => {
                let mut v = vec![&mut c.weight];
                if let Some(b) = &mut c.bias {
                    v.push(b);
                }
                v
            }
            Layer::SeparableConv2d(s) => {
                let SeparableConv2d { depthwise, pointwise } = s;
                let mut v = vec![&mut depthwise.weight, &mut pointwise.weight];
                if let Some(b) = &mut pointwise.bias {
                    v.push(b);
                }
                v
            }
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    pub fn apply_max_norm(&mut self, limit: f64) {
        match self {
            Layer::Conv2d(c) | Layer::DepthwiseConv2d(c) => c.apply_max_norm(limit),
            Layer::SeparableConv2d(s) => s.pointwise.apply_max_norm(limit),
            Layer::Dense(d) => d.apply_max_norm(limit),
            _ => {}
        }
    }
}

fn swap_maps_height(x: &Tensor) -> Tensor {
    let [n, f, h, w] = x.shape();
    let mut out = Tensor::zeros([n, h, f, w]);
    let (src, dst) = (x.data(), out.data_mut());
    for b in 0..n {
        for c in 0..f {
            for y in 0..h {
                let s = ((b * f + c) * h + y) * w;
                let d = ((b * h + y) * f + c) * w;
                dst[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    out
}
