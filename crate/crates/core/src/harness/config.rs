use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMode, AttentionPipeline, WeightVector};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::tensor::{AdamConfig, StepDecay};

/// Training schema (TOML). Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub snippet_length: usize,
    pub segments: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub lr_decay_period: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub pose_lr: f64,
    /// Share of the per-frame term in the loss; the pooled term gets the rest.
    pub frame_loss_weight: f64,
    /// Multiply frames by the attention map; `false` trains on raw frames.
    pub fusion: bool,
    /// One weight per flow; empty means the default weight for each.
    pub attention_weights: Vec<f32>,
    pub attention_mode: AttentionMode,
    pub flow: FlowParams,
    pub crop_fraction_range: (f64, f64),
    pub hflip_probability: f64,
    pub checkpoint_every: usize,
    /// Prepared batches buffered ahead of the optimizer.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            snippet_length: 15,
            segments: 3,
            epochs: 80,
            base_lr: 1e-5,
            weight_decay: 1e-4,
            lr_decay_period: 40,
            lr_decay_factor: 0.1,
            seed: 0,
            pose_lr: 1e-3,
            frame_loss_weight: 0.5,
            fusion: true,
            attention_weights: Vec::new(),
            attention_mode: AttentionMode::FullFrame,
            flow: FlowParams::default(),
            crop_fraction_range: (0.8, 1.0),
            hflip_probability: 0.5,
            checkpoint_every: 10,
            queue_depth: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("snippet_length", self.snippet_length),
            ("segments", self.segments),
            ("epochs", self.epochs),
            ("lr_decay_period", self.lr_decay_period),
            ("checkpoint_every", self.checkpoint_every),
            ("queue_depth", self.queue_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.segments > self.snippet_length {
            return Err(Error::config(format!(
                "segments ({}) exceed snippet_length ({})",
                self.segments, self.snippet_length
            )));
        }
        if !(self.base_lr >= 0.0 && self.pose_lr >= 0.0) {
            return Err(Error::config("learning rates must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.frame_loss_weight) {
            return Err(Error::config("frame_loss_weight must lie in [0, 1]"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::config("lr_decay_factor must be positive"));
        }
        if self.fusion {
            self.attention()?;
        }
        self.adam().validate()
    }

    pub fn attention(&self) -> Result<AttentionPipeline> {
        let weights = if self.attention_weights.is_empty() {
            WeightVector::default_for(self.segments)
        } else {
            WeightVector::new(self.attention_weights.clone())?
        };
        let pipeline = AttentionPipeline {
            segments: self.segments,
            weights,
            flow: self.flow,
            mode: self.attention_mode,
        };
        pipeline.validate()?;
        Ok(pipeline)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.base_lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay::new(self.lr_decay_period, self.lr_decay_factor)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}
