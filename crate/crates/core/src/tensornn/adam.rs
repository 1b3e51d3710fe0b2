use serde::{Deserialize, Serialize};

use super::layers::ParamSlot;
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// One update over all slots. Slot order must be stable between calls.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, slots: Vec<ParamSlot<'_>>, layer_kinds: &[&str]) -> Result<()> {
        for s in &slots {
            if s.grad.iter().any(|g| !g.is_finite()) {
                let kind = layer_kinds.get(s.layer).copied().unwrap_or("?");
                return Err(NnError::NonFiniteGradient {
                    layer: format!("{} ({kind})", s.layer),
                    param: s.name.to_string(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != slots.len() {
            return Err(NnError::Config("parameter layout changed between Adam steps".into()));
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((s, m), v) in slots.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..s.value.len() {
                let g = s.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                s.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot<'a>(v: &'a mut [f64], g: &'a [f64]) -> ParamSlot<'a> {
        ParamSlot {
            layer: 0,
            name: "w",
            value: v,
            grad: g,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut w = vec![1.0, -1.0];
        opt.step(vec![slot(&mut w, &[0.5, -3.0])], &["dense"]).unwrap();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        })
        .unwrap();
        let mut w = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (w[0] - 1.0)];
            opt.step(vec![slot(&mut w, &g)], &["dense"]).unwrap();
        }
        assert!((w[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut w = vec![1.0];
        let err = opt.step(vec![slot(&mut w, &[f64::NAN])], &["conv2d"]).unwrap_err();
        assert!(err.to_string().contains("conv2d"));
        assert_eq!(w[0], 1.0);
    }
}
