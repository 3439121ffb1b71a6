//! Keypoint-sequence classifier: two conv1d blocks over time, an LSTM, and
//! a classifier over the flattened per-frame hidden states.

use serde::{Deserialize, Serialize};

use super::{transpose_last2, StateDict};
use crate::error::{Error, Result};
use crate::media::NUM_JOINTS;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{softmax_last_axis, LayerSpec, Mode, Param, Real, Sequential, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub enabled: bool,
    pub frames: usize,
    pub joints: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub dropout: f64,
    pub lstm_units: usize,
    pub num_classes: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            frames: 30,
            joints: NUM_JOINTS,
            conv_channels: [32, 64],
            kernel: 3,
            dropout: 0.5,
            lstm_units: 20,
            num_classes: 2,
        }
    }
}

impl PoseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.joints == 0 || self.lstm_units == 0 || self.num_classes == 0 {
            return Err(Error::config("pose stream dims must be positive"));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::config("pose conv channels must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("pose dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

struct PoseContext {
    batch: usize,
}

pub struct PoseStream<T: Real = f32> {
    config: PoseConfig,
    conv: Sequential<T>,
    recurrent: Sequential<T>,
    classifier: Sequential<T>,
    ctx: Option<PoseContext>,
}

impl<T: Real> PoseStream<T> {
    pub fn new(config: PoseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let [c1, c2] = config.conv_channels;
        let features = 2 * config.joints;
        let conv = Sequential::new(
            [
                LayerSpec::Conv1d {
                    in_channels: features,
                    out_channels: c1,
                    kernel: config.kernel,
                },
                LayerSpec::BatchNorm { features: c1 },
                LayerSpec::Dropout { ratio: config.dropout },
                LayerSpec::Conv1d {
                    in_channels: c1,
                    out_channels: c2,
                    kernel: config.kernel,
                },
                LayerSpec::BatchNorm { features: c2 },
                LayerSpec::Dropout { ratio: config.dropout },
            ],
            &mut rng,
        )?;
        let recurrent = Sequential::new(
            [LayerSpec::Lstm {
                input_size: c2,
                hidden_size: config.lstm_units,
            }],
            &mut rng,
        )?;
        let classifier = Sequential::new(
            [LayerSpec::Dense {
                in_features: config.frames * config.lstm_units,
                out_features: config.num_classes,
            }],
            &mut rng,
        )?;
        Ok(Self {
            config,
            conv,
            recurrent,
            classifier,
            ctx: None,
        })
    }

    pub fn config(&self) -> &PoseConfig {
        &self.config
    }

    /// Class logits `B×classes` for keypoints `B×frames×joints×2`.
    pub fn forward(&mut self, keypoints: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let cfg = &self.config;
        if keypoints.rank() != 4 || keypoints.dim(3) != 2 {
            return Err(Error::config(format!(
                "pose stream: keypoints must be Bx{}x{}x2, got {:?}",
                cfg.frames,
                cfg.joints,
                keypoints.shape()
            )));
        }
        if keypoints.dim(2) != cfg.joints {
            return Err(Error::config(format!(
                "pose stream: axis 2 has {} joints, expected {}",
                keypoints.dim(2),
                cfg.joints
            )));
        }
        if keypoints.dim(1) != cfg.frames {
            return Err(Error::config(format!(
                "pose stream: axis 1 has {} frames, expected {}",
                keypoints.dim(1),
                cfg.frames
            )));
        }
        let b = keypoints.dim(0);
        let per_frame = keypoints.clone().reshape(&[b, cfg.frames, 2 * cfg.joints])?;
        let x = self.conv.forward(&transpose_last2(&per_frame)?, mode, derive_seed(seed, 0))?;
        let h = self.recurrent.forward(&transpose_last2(&x)?, mode, derive_seed(seed, 1))?;
        let flat = h.reshape(&[b, cfg.frames * cfg.lstm_units])?;
        let logits = self.classifier.forward(&flat, mode, derive_seed(seed, 2))?;
        self.ctx = Some(PoseContext { batch: b });
        Ok(logits)
    }

    /// Class probabilities (softmax of [`PoseStream::forward`]).
    pub fn probabilities(&mut self, keypoints: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        softmax_last_axis(&self.forward(keypoints, mode, seed)?)
    }

    /// Gradient with respect to the keypoints, given the logit gradient.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self
            .ctx
            .as_ref()
            .ok_or_else(|| Error::usage("pose stream backward called before forward"))?
            .batch;
        let cfg = &self.config;
        let g = self.classifier.backward(upstream)?;
        let g = g.reshape(&[b, cfg.frames, cfg.lstm_units])?;
        let g = self.recurrent.backward(&g)?;
        let g = self.conv.backward(&transpose_last2(&g)?)?;
        transpose_last2(&g)?.reshape(&[b, cfg.frames, cfg.joints, 2])
    }

    pub fn zero_grad(&mut self) {
        self.conv.zero_grad();
        self.recurrent.zero_grad();
        self.classifier.zero_grad();
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.conv
            .params_mut()
            .chain(self.recurrent.params_mut())
            .chain(self.classifier.params_mut())
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.conv
            .named_params("pose.conv")
            .chain(self.recurrent.named_params("pose.lstm"))
            .chain(self.classifier.named_params("pose.fc"))
            .collect()
    }

    pub fn state(&self) -> StateDict {
        super::state_of(self.named_params())
    }

    pub fn load_state(&mut self, state: &StateDict) -> Result<()> {
        let mut slots: Vec<(String, &mut Param<T>)> = self
            .conv
            .named_params_mut("pose.conv")
            .chain(self.recurrent.named_params_mut("pose.lstm"))
            .chain(self.classifier.named_params_mut("pose.fc"))
            .collect();
        super::load_into(&mut slots, state)
    }
}
