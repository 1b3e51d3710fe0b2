use serde::{Deserialize, Serialize};

use crate::tensornn::tensor::{Shape, Tensor};
use crate::tensornn::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Mean,
}

/// Valid-padding pooling; windows may overlap when stride < pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub kind: PoolKind,
    pub pool: [usize; 2],
    pub stride: [usize; 2],
}

impl Pool {
    pub fn new(kind: PoolKind, pool: [usize; 2], stride: [usize; 2]) -> Result<Self> {
        if pool.contains(&0) || stride.contains(&0) {
            return Err(NnError::Config("pool and stride must be at least 1".into()));
        }
        Ok(Pool { kind, pool, stride })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, f, h, w] = input;
        if h < self.pool[0] || w < self.pool[1] {
            return Err(NnError::Shape(format!(
                "pool window {:?} larger than input {:?}",
                self.pool, input
            )));
        }
        Ok([
            n,
            f,
            (h - self.pool[0]) / self.stride[0] + 1,
            (w - self.pool[1]) / self.stride[1] + 1,
        ])
    }

    /// Output plus, for max pooling, the flat input index chosen per output.
    pub fn forward_with_argmax(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, f, h, w] = x.shape();
        let [_, _, oh, ow] = out_shape;
        let [ph, pw] = self.pool;
        let [sh, sw] = self.stride;
        let mut out = Tensor::zeros(out_shape);
        let mut argmax = Vec::new();
        if self.kind == PoolKind::Max {
            argmax.reserve(out.len());
        }
        let xd = x.data();
        let scale = 1.0 / (ph * pw) as f64;
        let od = out.data_mut();
        let mut o = 0;
        for plane in 0..n * f {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * sh, ox * sw);
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = base + y0 * w + x0;
                            for dy in 0..ph {
                                let row = base + (y0 + dy) * w + x0;
                                for j in row..row + pw {
                                    if xd[j] > xd[best] {
                                        best = j;
                                    }
                                }
                            }
                            od[o] = xd[best];
                            argmax.push(best);
                        }
                        PoolKind::Mean => {
                            let mut s = 0.0;
                            for dy in 0..ph {
                                let row = base + (y0 + dy) * w + x0;
                                s += xd[row..row + pw].iter().sum::<f64>();
                            }
                            od[o] = s * scale;
                        }
                    }
                    o += 1;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with_argmax(x).map(|(y, _)| y)
    }

    /// Max pooling routes each gradient to its (first) argmax; mean pooling
    /// spreads it evenly over the window.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, argmax: Option<&[usize]>) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        grad_out.expect_shape(out_shape, "pool upstream gradient")?;
        let mut gin = Tensor::zeros(x.shape());
        let gd = grad_out.data();
        match self.kind {
            PoolKind::Max => {
                let recomputed;
                let idx = match argmax {
                    Some(a) if a.len() == gd.len() => a,
                    _ => {
                        recomputed = self.forward_with_argmax(x)?.1;
                        &recomputed
                    }
                };
                let gi = gin.data_mut();
                for (&i, &g) in idx.iter().zip(gd) {
                    gi[i] += g;
                }
            }
            PoolKind::Mean => {
                let [n, f, h, w] = x.shape();
                let [_, _, oh, ow] = out_shape;
                let [ph, pw] = self.pool;
                let [sh, sw] = self.stride;
                let scale = 1.0 / (ph * pw) as f64;
                let gi = gin.data_mut();
                let mut o = 0;
                for plane in 0..n * f {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gd[o] * scale;
                            for dy in 0..ph {
                                let row = base + (oy * sh + dy) * w + ox * sw;
                                gi[row..row + pw].iter_mut().for_each(|v| *v += g);
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
        Ok(gin)
    }
}
