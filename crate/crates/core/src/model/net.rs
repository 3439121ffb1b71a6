use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::{BackboneConfig, HeadConfig};
use super::pool::{temporal_maxpool, PooledLogits};
use super::pose::PoseConfig;
use super::roi::{roi_align, roi_align_backward, RoiAlignConfig};
use super::{load_into, state_of, StateDict};
use crate::error::{Error, Result};
use crate::media::Box2;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{
    bce_with_logits_masked, load_checkpoint, save_checkpoint, softmax_last_axis, Mode, Param, Real, Sequential, Tensor,
};

/// How logits turn into class probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Independent per-class probabilities (multi-label).
    Sigmoid,
    /// One distribution over classes (single-label).
    #[default]
    Softmax,
}

impl HeadMode {
    pub fn probabilities<T: Real>(self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            HeadMode::Softmax => softmax_last_axis(logits),
            HeadMode::Sigmoid => Ok(logits.map(|z| T::one() / (T::one() + (-z).exp()))),
        }
    }
}

/// Model file schema (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub head_mode: HeadMode,
    pub backbone: BackboneConfig,
    /// Side of the square ROI crop.
    pub crop_size: usize,
    pub samples_per_bin: usize,
    pub head: HeadConfig,
    pub pose: PoseConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            input_height: 420,
            input_width: 720,
            head_mode: HeadMode::Softmax,
            backbone: BackboneConfig::default(),
            crop_size: 5,
            samples_per_bin: 2,
            head: HeadConfig::default(),
            pose: PoseConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        self.backbone.validate()?;
        self.backbone.output_dims(self.input_height, self.input_width)?;
        self.roi().validate()?;
        if self.pose.enabled {
            self.pose.validate()?;
            if self.pose.num_classes != self.num_classes {
                return Err(Error::config(format!(
                    "pose stream has {} classes, model has {}",
                    self.pose.num_classes, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn roi(&self) -> RoiAlignConfig {
        RoiAlignConfig {
            crop_height: self.crop_size,
            crop_width: self.crop_size,
            samples_per_bin: self.samples_per_bin,
            spatial_scale: 1.0 / self.backbone.total_stride() as f64,
        }
    }

    /// Flattened ROI feature length per actor slot.
    pub fn roi_features(&self) -> usize {
        self.backbone.output_channels() * self.crop_size * self.crop_size
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

/// `B` snippets of `T` frames with `N` actor slots each.
#[derive(Debug, Clone)]
pub struct SnippetBatch<T: Real = f32> {
    /// `(B·T)×C×H×W`
    pub frames: Tensor<T>,
    pub batch: usize,
    pub time: usize,
    pub actors: usize,
    /// `B·T·N` slots in input pixels; `None` marks an absent actor.
    pub boxes: Vec<Option<Box2>>,
    /// `B×T×N×classes` one-hot (or multi-hot) targets.
    pub targets: Tensor<T>,
}

impl<T: Real> SnippetBatch<T> {
    pub fn slots(&self) -> usize {
        self.batch * self.time * self.actors
    }

    pub fn presence(&self) -> Vec<bool> {
        self.boxes.iter().map(Option::is_some).collect()
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let bt = self.batch * self.time;
        if self.frames.rank() != 4 || self.frames.dim(0) != bt {
            return Err(Error::config(format!(
                "snippet batch: frames {:?}, expected axis 0 of size {bt}",
                self.frames.shape()
            )));
        }
        if self.boxes.len() != self.slots() {
            return Err(Error::config(format!(
                "snippet batch: {} boxes for {} slots",
                self.boxes.len(),
                self.slots()
            )));
        }
        let want = [self.batch, self.time, self.actors, classes];
        if self.targets.shape() != want {
            return Err(Error::config(format!(
                "snippet batch: targets {:?}, expected {want:?}",
                self.targets.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NetOutput<T: Real = f32> {
    /// `B×T×N×classes`, zero at absent slots.
    pub frame_logits: Tensor<T>,
    /// `B×N×classes` max over present frames.
    pub pooled: PooledLogits<T>,
}

struct NetContext {
    feature_shape: Vec<usize>,
    boxes: Vec<Option<Box2>>,
    rows: Vec<usize>,
    slots_shape: [usize; 3],
}

/// Backbone → ROI align → per-slot head → temporal max pool.
pub struct SwtaNet<T: Real = f32> {
    config: ModelConfig,
    backbone: Sequential<T>,
    head: Sequential<T>,
    ctx: Option<NetContext>,
}

impl<T: Real> SwtaNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let backbone = config.backbone.build(&mut rng)?;
        let head = config
            .head
            .build(config.roi_features(), config.num_classes, &mut rng)?;
        Ok(Self {
            config,
            backbone,
            head,
            ctx: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&mut self, batch: &SnippetBatch<T>, mode: Mode, seed: u64) -> Result<NetOutput<T>> {
        let classes = self.config.num_classes;
        batch.validate(classes)?;
        let features = self.backbone.forward(&batch.frames, mode, derive_seed(seed, 0))?;
        let roi = roi_align(&features, &batch.boxes, &self.config.roi())?;
        let width = self.config.roi_features();
        let rows: Vec<usize> = (0..batch.slots()).filter(|&s| batch.boxes[s].is_some()).collect();
        let mut logits = vec![T::zero(); batch.slots() * classes];
        if !rows.is_empty() {
            let mut gathered = Vec::with_capacity(rows.len() * width);
            for &s in &rows {
                gathered.extend_from_slice(&roi.data()[s * width..(s + 1) * width]);
            }
            let gathered = Tensor::from_vec(&[rows.len(), width], gathered)?;
            let out = self.head.forward(&gathered, mode, derive_seed(seed, 1))?;
            for (r, &s) in rows.iter().enumerate() {
                logits[s * classes..(s + 1) * classes].copy_from_slice(&out.data()[r * classes..(r + 1) * classes]);
            }
        }
        let frame_logits = Tensor::from_vec(&[batch.batch, batch.time, batch.actors, classes], logits)?;
        let pooled = temporal_maxpool(&frame_logits, &batch.presence())?;
        self.ctx = Some(NetContext {
            feature_shape: features.shape().to_vec(),
            boxes: batch.boxes.clone(),
            rows,
            slots_shape: [batch.batch, batch.time, batch.actors],
        });
        Ok(NetOutput { frame_logits, pooled })
    }

    /// Accumulate parameter gradients from the gradients of the frame
    /// logits and of the pooled logits of the last forward pass.
    pub fn backward(&mut self, output: &NetOutput<T>, d_frame: &Tensor<T>, d_pooled: &Tensor<T>) -> Result<()> {
        let ctx = self
            .ctx
            .as_ref()
            .ok_or_else(|| Error::usage("network backward called before forward"))?;
        let classes = self.config.num_classes;
        if d_frame.shape() != output.frame_logits.shape() {
            return Err(Error::config(format!(
                "network backward: frame gradient {:?}, expected {:?}",
                d_frame.shape(),
                output.frame_logits.shape()
            )));
        }
        let through_pool = output.pooled.backward(d_pooled)?;
        let total: Vec<T> = d_frame
            .data()
            .iter()
            .zip(through_pool.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let width = self.config.roi_features();
        let [b, t, n] = ctx.slots_shape;
        let mut d_roi = vec![T::zero(); b * t * n * width];
        if !ctx.rows.is_empty() {
            let mut d_rows = Vec::with_capacity(ctx.rows.len() * classes);
            for &s in &ctx.rows {
                d_rows.extend_from_slice(&total[s * classes..(s + 1) * classes]);
            }
            let d_in = self
                .head
                .backward(&Tensor::from_vec(&[ctx.rows.len(), classes], d_rows)?)?;
            for (r, &s) in ctx.rows.iter().enumerate() {
                d_roi[s * width..(s + 1) * width].copy_from_slice(&d_in.data()[r * width..(r + 1) * width]);
            }
        }
        let crop = self.config.crop_size;
        let d_roi = Tensor::from_vec(&[b * t, n, self.config.backbone.output_channels(), crop, crop], d_roi)?;
        let d_features = roi_align_backward(&d_roi, &ctx.feature_shape, &ctx.boxes, &self.config.roi())?;
        self.backbone.backward(&d_features)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.head.zero_grad();
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.backbone.params_mut().chain(self.head.params_mut())
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.backbone
            .named_params("backbone")
            .chain(self.head.named_params("head"))
            .collect()
    }

    pub fn state(&self) -> StateDict {
        state_of(self.named_params())
    }

    /// Restore every parameter and running statistic from `state`, checking
    /// names and dims.
    pub fn load_state(&mut self, state: &StateDict) -> Result<()> {
        let mut slots: Vec<(String, &mut Param<T>)> = self
            .backbone
            .named_params_mut("backbone")
            .chain(self.head.named_params_mut("head"))
            .collect();
        load_into(&mut slots, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.state())
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.load_state(&load_checkpoint(path)?)?;
        Ok(net)
    }
}

/// Weighted sum of the per-frame and pooled binary cross-entropies, with
/// gradients for [`SwtaNet::backward`].
#[derive(Debug, Clone)]
pub struct SnippetLoss<T: Real = f32> {
    pub total: T,
    pub frame: T,
    pub pooled: T,
    pub d_frame: Tensor<T>,
    pub d_pooled: Tensor<T>,
}

/// `frame_weight · frame_term + (1 - frame_weight) · pooled_term`. Pooled
/// targets are the union of an actor's targets over its present frames.
/// Absent slots contribute nothing.
pub fn snippet_loss<T: Real>(output: &NetOutput<T>, batch: &SnippetBatch<T>, frame_weight: f64) -> Result<SnippetLoss<T>> {
    if !(0.0..=1.0).contains(&frame_weight) {
        return Err(Error::config(format!("frame loss weight {frame_weight} outside [0, 1]")));
    }
    let classes = output.frame_logits.dim(3);
    let (b, t, n) = (batch.batch, batch.time, batch.actors);
    let presence = batch.presence();
    let frame_mask: Vec<bool> = presence.iter().flat_map(|&p| std::iter::repeat_n(p, classes)).collect();
    let (frame, mut d_frame) = bce_with_logits_masked(&output.frame_logits, &batch.targets, Some(&frame_mask))?;

    let mut pooled_targets = vec![T::zero(); b * n * classes];
    for bi in 0..b {
        for ti in 0..t {
            for ni in 0..n {
                if !presence[(bi * t + ti) * n + ni] {
                    continue;
                }
                for c in 0..classes {
                    let o = (bi * n + ni) * classes + c;
                    pooled_targets[o] = pooled_targets[o].max(batch.targets.data()[((bi * t + ti) * n + ni) * classes + c]);
                }
            }
        }
    }
    let pooled_targets = Tensor::from_vec(&[b, n, classes], pooled_targets)?;
    let pooled_mask: Vec<bool> = output
        .pooled
        .actor_present
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, classes))
        .collect();
    let (pooled, mut d_pooled) = bce_with_logits_masked(&output.pooled.values, &pooled_targets, Some(&pooled_mask))?;

    let wf = T::of(frame_weight);
    let wp = T::of(1.0 - frame_weight);
    d_frame.data_mut().iter_mut().for_each(|g| *g = *g * wf);
    d_pooled.data_mut().iter_mut().for_each(|g| *g = *g * wp);
    Ok(SnippetLoss {
        total: wf * frame + wp * pooled,
        frame,
        pooled,
        d_frame,
        d_pooled,
    })
}
