use serde::{Deserialize, Serialize};

use super::layer::Param;
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Added to the gradient as `weight_decay * param` before the moment
    /// updates (L2 regularization, not decoupled decay).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return Err(Error::config(
                "adam learning rate and weight decay must be >= 0, epsilon > 0",
            ));
        }
        Ok(())
    }
}

struct Moments<T> {
    name: String,
    first: Vec<T>,
    second: Vec<T>,
}

/// Bias-corrected Adam over an ordered list of parameters. Moment buffers
/// are bound to parameters by position on the first step.
pub struct Adam<T: Real = f32> {
    config: AdamConfig,
    step_count: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            moments: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Apply one update to every trainable parameter from its `grad`.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Param<T>>,
    {
        let mut params: Vec<&mut Param<T>> =
            params.into_iter().filter(|p| p.trainable).collect();
        for p in &params {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter `{}` at index {i}",
                    p.name
                )));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    first: vec![T::zero(); p.value.len()],
                    second: vec![T::zero(); p.value.len()],
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::usage(format!(
                "adam was initialised with {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.moments) {
            if p.name != m.name || p.value.len() != m.first.len() {
                return Err(Error::usage(format!(
                    "adam moment buffer `{}` does not match parameter `{}`",
                    m.name, p.name
                )));
            }
        }

        self.step_count += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let wd = T::of(c.weight_decay);
        let t = self.step_count as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        for (p, m) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.data().to_vec();
            let value = p.value.data_mut();
            for (i, g) in grad.into_iter().enumerate() {
                let g = g + wd * value[i];
                m.first[i] = b1 * m.first[i] + (T::one() - b1) * g;
                m.second[i] = b2 * m.second[i] + (T::one() - b2) * g * g;
                let mhat = m.first[i] / corr1;
                let vhat = m.second[i] / corr2;
                value[i] = value[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base_lr * decay_factor^floor(epoch / period_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub period_epochs: usize,
    pub decay_factor: f64,
    pub current_epoch: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            period_epochs: 40,
            decay_factor: 0.1,
            current_epoch: 0,
        }
    }
}

impl StepDecay {
    pub fn new(period_epochs: usize, decay_factor: f64) -> Self {
        Self {
            period_epochs,
            decay_factor,
            current_epoch: 0,
        }
    }

    pub fn at_epoch(mut self, epoch: usize) -> Self {
        self.current_epoch = epoch;
        self
    }

    pub fn learning_rate(&self, base_lr: f64) -> f64 {
        if self.period_epochs == 0 {
            return base_lr;
        }
        let decays = (self.current_epoch / self.period_epochs) as i32;
        base_lr * self.decay_factor.powi(decays)
    }

    pub fn advance(&mut self) {
        self.current_epoch += 1;
    }
}
