use serde::{Deserialize, Serialize};

use super::{warp_affine, ActorAnnotations, Affine2};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Smallest crop window side, in pixels.
pub const MIN_CROP_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Crop side as a fraction of the frame side, drawn uniformly.
    pub crop_fraction_range: (f64, f64),
    pub hflip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_fraction_range: (0.8, 1.0),
            hflip_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "crop fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(Error::config("hflip probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The single geometric transform drawn for a snippet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentTransform {
    /// Crop window `(x0, y0, width, height)` in source pixels.
    pub crop: (usize, usize, usize, usize),
    pub flip: bool,
    /// Source pixel coordinates to output pixel coordinates.
    pub map: Affine2,
}

impl AugmentTransform {
    pub fn draw(h: usize, w: usize, config: &AugmentationConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.seed);
        let (lo, hi) = config.crop_fraction_range;
        let frac = rng.uniform(lo, hi);
        let cw = ((w as f64 * frac).round() as usize).min(w);
        let ch = ((h as f64 * frac).round() as usize).min(h);
        if cw < MIN_CROP_SIDE || ch < MIN_CROP_SIDE {
            return Err(Error::config(format!(
                "crop window {cw}x{ch} is smaller than {MIN_CROP_SIDE}x{MIN_CROP_SIDE}"
            )));
        }
        let x0 = rng.below((w - cw + 1) as u64) as usize;
        let y0 = rng.below((h - ch + 1) as u64) as usize;
        let flip = rng.bernoulli(config.hflip_probability);
        let (sx, sy) = (w as f64 / cw as f64, h as f64 / ch as f64);
        let mut map = Affine2 {
            sx,
            sy,
            tx: -(x0 as f64) * sx,
            ty: -(y0 as f64) * sy,
        };
        if flip {
            map = Affine2 {
                sx: -map.sx,
                sy: map.sy,
                tx: w as f64 - map.tx,
                ty: map.ty,
            };
        }
        Ok(Self {
            crop: (x0, y0, cw, ch),
            flip,
            map,
        })
    }

    pub fn apply_frame(&self, frame: &Tensor<f32>) -> Tensor<f32> {
        if self.map == Affine2::IDENTITY {
            return frame.clone();
        }
        warp_affine(frame, frame.dim(1), frame.dim(2), &self.map, 0.0)
    }
}

/// Random crop (resized back to the frame size) and horizontal flip, drawn
/// once per snippet and applied identically to every frame and to the
/// annotations. Boxes that end up fully outside the crop become absent.
pub fn augment(
    frames: &[Tensor<f32>],
    annotations: &ActorAnnotations,
    config: &AugmentationConfig,
) -> Result<(Vec<Tensor<f32>>, ActorAnnotations, AugmentTransform)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::config("augment: empty snippet"))?;
    let (h, w) = (first.dim(1), first.dim(2));
    let tf = AugmentTransform::draw(h, w, config)?;
    let out: Vec<_> = frames.iter().map(|f| tf.apply_frame(f)).collect();
    let mut ann = annotations.clone();
    ann.transform(&tf.map, (h, w), (h, w));
    ann.clip_to_frame(h, w);
    Ok((out, ann, tf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::Box2;

    fn frame(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, h, w], |i| (i % 251) as f32)
    }

    #[test]
    fn no_op_configuration_is_identity() {
        let cfg = AugmentationConfig {
            crop_fraction_range: (1.0, 1.0),
            hflip_probability: 0.0,
            seed: 5,
        };
        let ann = ActorAnnotations::single_track(&[Box2::new(1.0, 2.0, 5.0, 6.0)], 0, vec!["a".into()]);
        let f = frame(16, 20);
        let (out, a2, _) = augment(std::slice::from_ref(&f), &ann, &cfg).unwrap();
        assert_eq!(out[0], f);
        assert_eq!(a2, ann);
    }

    #[test]
    fn flip_reflects_boxes() {
        let cfg = AugmentationConfig {
            crop_fraction_range: (1.0, 1.0),
            hflip_probability: 1.0,
            seed: 5,
        };
        let ann = ActorAnnotations::single_track(&[Box2::new(1.0, 2.0, 5.0, 6.0)], 0, vec!["a".into()]);
        let f = frame(16, 20);
        let (out, a2, tf) = augment(std::slice::from_ref(&f), &ann, &cfg).unwrap();
        assert!(tf.flip);
        assert_eq!(a2.box_at(0, 0), Box2::new(15.0, 2.0, 19.0, 6.0));
        assert_eq!(out[0].at(&[1, 3, 0]), f.at(&[1, 3, 19]));
    }

    #[test]
    fn tiny_crop_is_config_error() {
        let cfg = AugmentationConfig {
            crop_fraction_range: (0.5, 0.5),
            hflip_probability: 0.0,
            seed: 1,
        };
        let ann = ActorAnnotations::empty(1, 0, vec![]);
        assert!(matches!(augment(&[frame(12, 12)], &ann, &cfg), Err(Error::Config(_))));
    }
}
