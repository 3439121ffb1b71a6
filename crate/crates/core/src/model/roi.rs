//! Fixed-size bilinear crops of a feature map under boxes, in the aligned
//! convention: a box in input pixels is scaled to feature units and shifted
//! by half a cell so that feature cell `i` is centred at `i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::Box2;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiAlignConfig {
    pub crop_height: usize,
    pub crop_width: usize,
    /// Samples per bin along each axis.
    pub samples_per_bin: usize,
    /// Feature cells per input pixel, usually `1 / total_stride`.
    pub spatial_scale: f64,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        Self {
            crop_height: 5,
            crop_width: 5,
            samples_per_bin: 2,
            spatial_scale: 1.0,
        }
    }
}

impl RoiAlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::config("roi_align: crop dims must be at least 1"));
        }
        if self.samples_per_bin == 0 {
            return Err(Error::config("roi_align: samples_per_bin must be at least 1"));
        }
        if !(self.spatial_scale > 0.0 && self.spatial_scale.is_finite()) {
            return Err(Error::config("roi_align: spatial_scale must be positive"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.crop_height * self.crop_width
    }
}

/// Bilinear taps `(flat index, weight)` for one continuous sample position,
/// or nothing when the point lies more than one cell outside the map.
fn taps(y: f64, x: f64, h: usize, w: usize, out: &mut Vec<(usize, f64)>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        let v = v.max(0.0);
        let lo = v.floor() as usize;
        if lo >= n - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            (lo, lo + 1, v - lo as f64)
        }
    };
    let (y0, y1, ly) = axis(y, h);
    let (x0, x1, lx) = axis(x, w);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    out.extend([
        (y0 * w + x0, hy * hx),
        (y0 * w + x1, hy * lx),
        (y1 * w + x0, ly * hx),
        (y1 * w + x1, ly * lx),
    ]);
}

/// Per-bin tap lists for one box on an `h×w` map, already divided by the
/// number of samples. `None` for a box with no area inside the map.
fn bin_taps(b: &Box2, h: usize, w: usize, cfg: &RoiAlignConfig) -> Option<Vec<Vec<(usize, f64)>>> {
    let s = cfg.spatial_scale;
    let b = b.clamp_to((h as f64 / s) as f32, (w as f64 / s) as f32);
    if !b.is_valid() {
        return None;
    }
    let y_start = b.y_min as f64 * s - 0.5;
    let x_start = b.x_min as f64 * s - 0.5;
    let bin_h = (b.y_max as f64 - b.y_min as f64) * s / cfg.crop_height as f64;
    let bin_w = (b.x_max as f64 - b.x_min as f64) * s / cfg.crop_width as f64;
    let n = cfg.samples_per_bin;
    let norm = 1.0 / (n * n) as f64;
    let mut bins = Vec::with_capacity(cfg.bins());
    for i in 0..cfg.crop_height {
        for j in 0..cfg.crop_width {
            let mut t = Vec::with_capacity(4 * n * n);
            for sy in 0..n {
                let y = y_start + bin_h * (i as f64 + (sy as f64 + 0.5) / n as f64);
                for sx in 0..n {
                    let x = x_start + bin_w * (j as f64 + (sx as f64 + 0.5) / n as f64);
                    taps(y, x, h, w, &mut t);
                }
            }
            t.iter_mut().for_each(|(_, wt)| *wt *= norm);
            bins.push(t);
        }
    }
    Some(bins)
}

fn check_inputs<T: Real>(features: &Tensor<T>, boxes: &[Option<Box2>], cfg: &RoiAlignConfig) -> Result<usize> {
    cfg.validate()?;
    if features.rank() != 4 {
        return Err(Error::config(format!(
            "roi_align: features must be MxDxHxW, got {:?}",
            features.shape()
        )));
    }
    let m = features.dim(0);
    if m == 0 || !boxes.len().is_multiple_of(m) {
        return Err(Error::config(format!(
            "roi_align: {} box slots do not divide over {m} feature maps",
            boxes.len()
        )));
    }
    for (i, b) in boxes.iter().enumerate() {
        if let Some(b) = b {
            if b.to_array().iter().any(|v| v.is_nan()) {
                return Err(Error::config(format!("roi_align: box slot {i} has NaN coordinates")));
            }
        }
    }
    Ok(boxes.len() / m)
}

/// Crop `features` (`M×D×H×W`) under `boxes` (`M·N` slots in input pixels,
/// `None` for masked slots) into `M×N×D×crop_h×crop_w`. Masked and
/// degenerate slots are zero.
pub fn roi_align<T: Real>(features: &Tensor<T>, boxes: &[Option<Box2>], cfg: &RoiAlignConfig) -> Result<Tensor<T>> {
    let slots = check_inputs(features, boxes, cfg)?;
    let (m, d, h, w) = (features.dim(0), features.dim(1), features.dim(2), features.dim(3));
    let bins = cfg.bins();
    let per_image = slots * d * bins;
    let mut out = vec![T::zero(); m * per_image];
    let fdata = features.data();
    out.par_chunks_mut(per_image).enumerate().for_each(|(img, chunk)| {
        let fmap = &fdata[img * d * h * w..(img + 1) * d * h * w];
        for n in 0..slots {
            let Some(taps) = boxes[img * slots + n].as_ref().and_then(|b| bin_taps(b, h, w, cfg)) else {
                continue;
            };
            for c in 0..d {
                let plane = &fmap[c * h * w..(c + 1) * h * w];
                let dst = &mut chunk[(n * d + c) * bins..(n * d + c + 1) * bins];
                for (o, bin) in dst.iter_mut().zip(&taps) {
                    *o = bin.iter().fold(T::zero(), |acc, &(idx, wt)| acc + plane[idx] * T::of(wt));
                }
            }
        }
    });
    Tensor::from_vec(&[m, slots, d, cfg.crop_height, cfg.crop_width], out)
}

/// Gradient of [`roi_align`] with respect to the features, given the
/// gradient of its output.
pub fn roi_align_backward<T: Real>(
    upstream: &Tensor<T>,
    feature_shape: &[usize],
    boxes: &[Option<Box2>],
    cfg: &RoiAlignConfig,
) -> Result<Tensor<T>> {
    let probe: Tensor<T> = Tensor::zeros(&[feature_shape[0], 1, 1, 1]);
    let slots = check_inputs(&probe, boxes, cfg)?;
    let [m, d, h, w] = feature_shape else {
        return Err(Error::config("roi_align_backward: feature shape must have rank 4"));
    };
    let (m, d, h, w) = (*m, *d, *h, *w);
    let bins = cfg.bins();
    let expected = [m, slots, d, cfg.crop_height, cfg.crop_width];
    if upstream.shape() != expected {
        return Err(Error::config(format!(
            "roi_align_backward: upstream {:?}, expected {expected:?}",
            upstream.shape()
        )));
    }
    let g = upstream.data();
    let mut grad = vec![T::zero(); m * d * h * w];
    grad.par_chunks_mut(d * h * w).enumerate().for_each(|(img, chunk)| {
        for n in 0..slots {
            let Some(taps) = boxes[img * slots + n].as_ref().and_then(|b| bin_taps(b, h, w, cfg)) else {
                continue;
            };
            for c in 0..d {
                let plane = &mut chunk[c * h * w..(c + 1) * h * w];
                let src = &g[((img * slots + n) * d + c) * bins..((img * slots + n) * d + c + 1) * bins];
                for (&up, bin) in src.iter().zip(&taps) {
                    for &(idx, wt) in bin {
                        plane[idx] = plane[idx] + up * T::of(wt);
                    }
                }
            }
        }
    });
    Tensor::from_vec(feature_shape, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_box_with_one_sample_reads_cells() {
        let f: Tensor<f64> = Tensor::from_fn(&[1, 2, 8, 9], |i| i as f64);
        let cfg = RoiAlignConfig {
            samples_per_bin: 1,
            spatial_scale: 0.5,
            ..RoiAlignConfig::default()
        };
        // cells 2..7 × 3..8 in feature units, doubled for input pixels
        let b = Box2::new(6.0, 4.0, 16.0, 14.0);
        let out = roi_align(&f, &[Some(b)], &cfg).unwrap();
        for c in 0..2 {
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(out.at(&[0, 0, c, i, j]), f.at(&[0, c, 2 + i, 3 + j]));
                }
            }
        }
    }

    #[test]
    fn masked_and_degenerate_slots_are_zero() {
        let f: Tensor<f32> = Tensor::full(&[1, 1, 6, 6], 1.0);
        let cfg = RoiAlignConfig::default();
        let boxes = [None, Some(Box2::new(7.0, 7.0, 9.0, 9.0)), Some(Box2::new(1.0, 1.0, 4.0, 4.0))];
        let out = roi_align(&f, &boxes, &cfg).unwrap();
        let slot = |n: usize| out.data()[n * 25..(n + 1) * 25].to_vec();
        assert!(slot(0).iter().all(|&v| v == 0.0));
        assert!(slot(1).iter().all(|&v| v == 0.0));
        assert!(slot(2).iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn nan_box_is_config_error() {
        let f: Tensor<f32> = Tensor::zeros(&[1, 1, 4, 4]);
        let boxes = [Some(Box2::new(f32::NAN, 0.0, 1.0, 1.0))];
        assert!(matches!(
            roi_align(&f, &boxes, &RoiAlignConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let f: Tensor<f64> = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 37) % 11) as f64 - 5.0);
        let boxes = [
            Some(Box2::new(0.5, 1.0, 5.5, 6.0)),
            None,
            Some(Box2::new(-1.0, 2.0, 3.0, 9.0)),
            Some(Box2::new(2.2, 0.3, 5.9, 4.4)),
        ];
        let cfg = RoiAlignConfig::default();
        let out = roi_align(&f, &boxes, &cfg).unwrap();
        let up: Tensor<f64> = Tensor::from_fn(out.shape(), |i| ((i * 13) % 7) as f64 - 3.0);
        let back = roi_align_backward(&up, f.shape(), &boxes, &cfg).unwrap();
        let lhs: f64 = out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
