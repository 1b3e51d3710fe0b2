use crate::tensornn::tensor::{Shape, Tensor};
use crate::tensornn::{NnError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature-map batch normalization over `(N, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub maps: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(maps: usize) -> Self {
        BatchNorm {
            maps,
            gamma: vec![1.0; maps],
            beta: vec![0.0; maps],
            running_mean: vec![0.0; maps],
            running_var: vec![1.0; maps],
            grad_gamma: vec![0.0; maps],
            grad_beta: vec![0.0; maps],
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.maps
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input[1] != self.maps {
            return Err(NnError::Shape(format!(
                "batchnorm over {} maps got {} maps",
                self.maps, input[1]
            )));
        }
        Ok(input)
    }

    fn batch_stats(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        self.output_shape(x.shape())?;
        let [n, f, h, w] = x.shape();
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        let d = x.data();
        for c in 0..f {
            let mut s = 0.0;
            for b in 0..n {
                s += d[(b * f + c) * plane..][..plane].iter().sum::<f64>();
            }
            let m = s / count;
            let mut v = 0.0;
            for b in 0..n {
                v += d[(b * f + c) * plane..][..plane]
                    .iter()
                    .map(|x| (x - m) * (x - m))
                    .sum::<f64>();
            }
            mean[c] = m;
            var[c] = v / count;
        }
        Ok((mean, var))
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> Tensor {
        let [_, f, h, w] = x.shape();
        let plane = h * w;
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % f;
            let scale = self.gamma[c] / (var[c] + BN_EPS).sqrt();
            let shift = self.beta[c] - mean[c] * scale;
            chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        out
    }

    /// Batch statistics; updates running stats (unbiased variance) with momentum.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (mean, var) = self.batch_stats(x)?;
        let [n, _, h, w] = x.shape();
        let count = (n * h * w) as f64;
        let unbias = count / (count - 1.0);
        for c in 0..self.maps {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var[c] * unbias;
        }
        Ok(self.normalize(x, &mean, &var))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        Ok(self.normalize(x, &self.running_mean, &self.running_var))
    }

    /// Gradients of the train-mode transform.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<BatchNormGrads> {
        grad_out.expect_shape(x.shape(), "batchnorm upstream gradient")?;
        let (mean, var) = self.batch_stats(x)?;
        let [n, f, h, w] = x.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let xd = x.data();
        let gd = grad_out.data();
        let mut gin = Tensor::zeros(x.shape());
        let mut ggamma = vec![0.0; f];
        let mut gbeta = vec![0.0; f];
        for c in 0..f {
            let inv = 1.0 / (var[c] + BN_EPS).sqrt();
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for b in 0..n {
                let off = (b * f + c) * plane;
                for j in off..off + plane {
                    let xhat = (xd[j] - mean[c]) * inv;
                    sum_g += gd[j];
                    sum_gx += gd[j] * xhat;
                }
            }
            ggamma[c] = sum_gx;
            gbeta[c] = sum_g;
            let k = self.gamma[c] * inv / count;
            let gi = gin.data_mut();
            for b in 0..n {
                let off = (b * f + c) * plane;
                for j in off..off + plane {
                    let xhat = (xd[j] - mean[c]) * inv;
                    gi[j] = k * (count * gd[j] - sum_g - xhat * sum_gx);
                }
            }
        }
        Ok(BatchNormGrads {
            input: gin,
            gamma: ggamma,
            beta: gbeta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(t: &Tensor, c: usize) -> (f64, f64) {
        let [n, _, h, w] = t.shape();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| (0..h).flat_map(move |y| (0..w).map(move |x| [b, c, y, x])))
            .map(|i| t.at(i))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_normalizes() {
        let x = Tensor::from_fn([4, 2, 3, 5], |[n, c, h, w]| ((n * 31 + c * 7 + h * 3 + w) as f64).sin() * 5.0 + 3.0 * c as f64);
        let mut bn = BatchNorm::new(2);
        let y = bn.forward_train(&x).unwrap();
        for c in 0..2 {
            let (m, v) = moments(&y, c);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
        bn.gamma = vec![2.0, 2.0];
        bn.beta = vec![3.0, 3.0];
        let y = bn.forward_train(&x).unwrap();
        let (m, v) = moments(&y, 1);
        assert!((m - 3.0).abs() < 1e-9);
        assert!((v.sqrt() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn running_stats_and_eval() {
        let x = Tensor::from_fn([2, 1, 1, 2], |[n, _, _, w]| (n * 2 + w) as f64);
        let mut bn = BatchNorm::new(1);
        bn.forward_train(&x).unwrap();
        // batch mean 1.5, unbiased var 5/3
        assert!((bn.running_mean[0] - 0.15).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let y = bn.forward_eval(&x).unwrap();
        let expect = (3.0 - 0.15) / (bn.running_var[0] + BN_EPS).sqrt();
        assert!((y.at([1, 0, 0, 1]) - expect).abs() < 1e-12);
    }

    #[test]
    fn single_sample_batch_rejected_in_train_mode() {
        let mut bn = BatchNorm::new(1);
        assert!(matches!(
            bn.forward_train(&Tensor::zeros([1, 1, 2, 2])),
            Err(NnError::BatchTooSmall(1))
        ));
        assert!(bn.forward_eval(&Tensor::zeros([1, 1, 2, 2])).is_ok());
    }
}
