use std::collections::BTreeMap;

use super::{LayerParams, Real};
use crate::error::{Error, Result};

/// Adam hyperparameters with a stepwise exponential learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 0.9,
            decay_steps: 10_000,
        }
    }
}

impl AdamConfig {
    /// Learning rate applied by the update whose zero-based index is `step`.
    pub fn effective_lr(&self, step: u64) -> f64 {
        let exponent = (step / self.decay_steps) as i32;
        self.lr * self.decay_rate.powi(exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay_rate > 0.0
            && self.decay_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Per-parameter moment buffers plus the number of completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &LayerParams<T>) -> Self {
        let zeros = |p: &LayerParams<T>| {
            p.iter()
                .map(|(k, v)| (k.clone(), vec![T::zero(); v.numel()]))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// Rebuilds a state from stored buffers (checkpoint loading).
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        first: BTreeMap<String, Vec<T>>,
        second: BTreeMap<String, Vec<T>>,
    ) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.second.get(name).map(Vec::as_slice)
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.effective_lr(self.step)
    }

    /// One bias-corrected Adam update of every parameter in `params`.
    pub fn update(&mut self, params: &mut LayerParams<T>, grads: &BTreeMap<String, Vec<T>>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("missing gradient for parameter {name}")))?;
            if g.len() != p.numel() {
                return Err(Error::Dimension(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if !self.first.contains_key(name.as_str()) {
                return Err(Error::Contract(format!("optimizer state has no slot for {name}")));
            }
        }

        let c = self.config;
        let t = (self.step + 1) as i32;
        let lr = T::lit(c.effective_lr(self.step));
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let bc1 = T::one() - T::lit(c.beta1.powi(t));
        let bc2 = T::one() - T::lit(c.beta2.powi(t));

        for (name, p) in params.iter_mut() {
            let g = &grads[name.as_str()];
            let m = self.first.get_mut(name.as_str()).unwrap();
            let v = self.second.get_mut(name.as_str()).unwrap();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.is_finite() {
                return Err(Error::Numeric(format!("update made parameter {name} non-finite")));
            }
        }
        self.step += 1;
        Ok(())
    }
}
