use serde::{Deserialize, Serialize};

use crate::tensornn::tensor::Tensor;
use crate::tensornn::{NnError, Result};

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Square,
    Log,
    /// Softmax over the feature-map axis.
    Softmax,
}

impl Activation {
    pub fn forward(self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        match self {
            Activation::Elu => y.data_mut().iter_mut().for_each(|v| {
                if *v <= 0.0 {
                    *v = v.exp_m1()
                }
            }),
            Activation::Square => y.data_mut().iter_mut().for_each(|v| *v *= *v),
            Activation::Log => y.data_mut().iter_mut().for_each(|v| *v = v.max(LOG_FLOOR).ln()),
            Activation::Softmax => softmax_maps(&mut y),
        }
        y
    }

    pub fn backward(self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if x.shape() != grad_out.shape() {
            return Err(NnError::Shape(format!(
                "activation gradient {:?} for input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let mut g = grad_out.clone();
        match self {
            Activation::Elu => {
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv *= xv.exp();
                    }
                }
            }
            Activation::Square => {
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    *gv *= 2.0 * xv;
                }
            }
            Activation::Log => {
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    *gv = if xv > LOG_FLOOR { *gv / xv } else { 0.0 };
                }
            }
            Activation::Softmax => {
                let y = self.forward(x);
                let [n, f, h, w] = x.shape();
                let plane = h * w;
                let (yd, gd) = (y.data(), g.data_mut());
                for b in 0..n {
                    for p in 0..plane {
                        let idx = |c: usize| (b * f + c) * plane + p;
                        let dotp: f64 = (0..f).map(|c| yd[idx(c)] * gd[idx(c)]).sum();
                        for c in 0..f {
                            gd[idx(c)] = yd[idx(c)] * (gd[idx(c)] - dotp);
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

fn softmax_maps(t: &mut Tensor) {
    let [n, f, h, w] = t.shape();
    let plane = h * w;
    let d = t.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let idx = |c: usize| (b * f + c) * plane + p;
            let max = (0..f).map(|c| d[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..f {
                let e = (d[idx(c)] - max).exp();
                d[idx(c)] = e;
                sum += e;
            }
            for c in 0..f {
                d[idx(c)] /= sum;
            }
        }
    }
}
