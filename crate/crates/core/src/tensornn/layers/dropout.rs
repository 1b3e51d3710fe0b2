use rand::Rng;

use crate::tensornn::tensor::Tensor;
use crate::tensornn::{NnError, Result};

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so evaluation
/// needs no rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    /// Multiplier per element from the last train-mode forward pass.
    pub mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, mask: vec![] })
    }

    pub fn forward_train<R: Rng>(&mut self, x: &Tensor, rng: &mut R) -> Tensor {
        if self.rate == 0.0 {
            self.mask = vec![1.0; x.len()];
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.rate);
        self.mask = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        y
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if self.mask.len() != grad_out.len() {
            return Err(NnError::Shape("dropout backward without matching forward pass".into()));
        }
        let mut g = grad_out.clone();
        g.data_mut().iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let mut d = Dropout::new(0.0).unwrap();
        let x = Tensor::from_fn([2, 2, 1, 3], |[n, c, _, w]| (n + c + w) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.forward_train(&x, &mut rng), x);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn expectation_is_preserved() {
        // Monte Carlo: mean over draws within 3 standard errors of the input
        let mut d = Dropout::new(0.5).unwrap();
        let x = Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 20_000;
        let vals: Vec<f64> = (0..draws).map(|_| d.forward_train(&x, &mut rng).data()[0]).collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        // per-draw std is x * sqrt(rate / (1 - rate)) = 2
        let se = 2.0 / (draws as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}");
        assert!(vals.iter().all(|&v| v == 0.0 || v == 4.0));
    }

    #[test]
    fn backward_uses_cached_mask() {
        let mut d = Dropout::new(0.5).unwrap();
        let x = Tensor::from_vec([1, 1, 1, 8], vec![1.0; 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = d.forward_train(&x, &mut rng);
        let g = d.backward(&x).unwrap();
        assert_eq!(g, y);
    }
}
