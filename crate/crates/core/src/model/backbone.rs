use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{LayerSpec, Real, Sequential};

/// Conv → batch norm → relu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub blocks: Vec<ConvBlock>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::uniform(3, &[16, 32, 64, 64], 3, 2)
    }
}

impl BackboneConfig {
    /// One block per entry of `channels`, all with the same kernel and stride.
    pub fn uniform(in_channels: usize, channels: &[usize], kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            blocks: channels
                .iter()
                .map(|&out_channels| ConvBlock {
                    out_channels,
                    kernel,
                    stride,
                })
                .collect(),
        }
    }

    pub fn output_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    pub fn total_stride(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    /// Feature plane size for an `h×w` input; each block floors `side / stride`.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mut oh, mut ow) = (h, w);
        for (i, b) in self.blocks.iter().enumerate() {
            oh /= b.stride;
            ow /= b.stride;
            if oh == 0 || ow == 0 {
                return Err(Error::config(format!(
                    "backbone block {i}: stride {} leaves no output for a {h}x{w} input",
                    b.stride
                )));
            }
        }
        Ok((oh, ow))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.blocks.is_empty() {
            return Err(Error::config("backbone needs input channels and at least one block"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::config(format!("backbone block {i} has a zero dimension")));
            }
        }
        Ok(())
    }

    pub(crate) fn build<T: Real>(&self, rng: &mut SplitMix64) -> Result<Sequential<T>> {
        self.validate()?;
        let mut specs = Vec::new();
        let mut c = self.in_channels;
        for b in &self.blocks {
            specs.push(LayerSpec::Conv2d {
                in_channels: c,
                out_channels: b.out_channels,
                kernel: b.kernel,
                stride: b.stride,
            });
            specs.push(LayerSpec::BatchNorm {
                features: b.out_channels,
            });
            specs.push(LayerSpec::Relu);
            c = b.out_channels;
        }
        Sequential::new(specs, rng)
    }
}

/// FC → dropout → batch norm → classifier FC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub fc_units: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            fc_units: 512,
            dropout: 0.3,
        }
    }
}

impl HeadConfig {
    pub(crate) fn build<T: Real>(&self, in_features: usize, classes: usize, rng: &mut SplitMix64) -> Result<Sequential<T>> {
        if self.fc_units == 0 {
            return Err(Error::config("head fc_units must be positive"));
        }
        Sequential::new(
            [
                LayerSpec::Dense {
                    in_features,
                    out_features: self.fc_units,
                },
                LayerSpec::Dropout { ratio: self.dropout },
                LayerSpec::BatchNorm {
                    features: self.fc_units,
                },
                LayerSpec::Dense {
                    in_features: self.fc_units,
                    out_features: classes,
                },
            ],
            rng,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backbone_on_full_frames() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.total_stride(), 16);
        assert_eq!(cfg.output_channels(), 64);
        assert_eq!(cfg.output_dims(420, 720).unwrap(), (26, 45));
    }

    #[test]
    fn too_small_input_is_config_error() {
        assert!(matches!(BackboneConfig::default().output_dims(8, 64), Err(Error::Config(_))));
    }
}
