use rand::Rng;

use crate::tensornn::layers::conv::dot;
use crate::tensornn::tensor::{Shape, Tensor};
use crate::tensornn::{NnError, Result};

/// Fully connected layer on the flattened input: `y = x W + b`, with `W`
/// stored `(inputs, outputs)` row-major. Output shape is `(N, K, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::Config("dense dimensions must be positive".into()));
        }
        Ok(Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            grad_weight: vec![0.0; inputs * outputs],
            grad_bias: vec![0.0; outputs],
        })
    }

    /// Uniform in `±1/sqrt(fan_in)`: the layer feeds the softmax directly, so
    /// no rectifier gain is applied.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let bound = 1.0 / (self.inputs as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.random_range(-bound..bound);
        }
        self.bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let d: usize = input[1..].iter().product();
        if d != self.inputs {
            return Err(NnError::Shape(format!(
                "dense layer expects {} inputs, got {:?} ({} values per sample)",
                self.inputs, input, d
            )));
        }
        Ok([input[0], self.outputs, 1, 1])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let mut out = Tensor::zeros(shape);
        let k = self.outputs;
        for (n, orow) in out.data_mut().chunks_mut(k).enumerate() {
            orow.copy_from_slice(&self.bias);
            for (d, &xv) in x.sample(n).iter().enumerate() {
                if xv != 0.0 {
                    for (o, w) in orow.iter_mut().zip(&self.weight[d * k..(d + 1) * k]) {
                        *o += xv * w;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let shape = self.output_shape(x.shape())?;
        grad_out.expect_shape(shape, "dense upstream gradient")?;
        let k = self.outputs;
        let n = x.batch();
        let mut gin = Tensor::zeros(x.shape());
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; k];
        let gd = grad_out.data();
        for b in 0..n {
            let grow = &gd[b * k..(b + 1) * k];
            for (acc, g) in gb.iter_mut().zip(grow) {
                *acc += g;
            }
            let xs = x.sample(b);
            for (d, &xv) in xs.iter().enumerate() {
                for (acc, g) in gw[d * k..(d + 1) * k].iter_mut().zip(grow) {
                    *acc += xv * g;
                }
            }
        }
        let gi = gin.data_mut();
        for b in 0..n {
            let grow = &gd[b * k..(b + 1) * k];
            for d in 0..self.inputs {
                gi[b * self.inputs + d] = dot(&self.weight[d * k..(d + 1) * k], grow);
            }
        }
        Ok(DenseGrads {
            input: gin,
            weight: gw,
            bias: gb,
        })
    }

    /// Rescales each output unit's incoming weight vector to norm ≤ `limit`.
    pub fn apply_max_norm(&mut self, limit: f64) {
        let k = self.outputs;
        for o in 0..k {
            let norm = (0..self.inputs).map(|d| self.weight[d * k + o].powi(2)).sum::<f64>().sqrt();
            if norm > limit {
                let s = limit / norm;
                (0..self.inputs).for_each(|d| self.weight[d * k + o] *= s);
            }
        }
    }
}
