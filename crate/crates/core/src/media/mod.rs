//! Frames, annotations and the geometric preprocessing applied to them.

mod annotations;
mod augment;
mod io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use annotations::{ActorAnnotations, AnnotationFile, FrameAnnotation, Box2, NUM_JOINTS, PAD_LABEL};
pub use augment::{augment, AugmentTransform, AugmentationConfig};
pub use io::{load_clip, load_frames, png_paths, read_png, save_clip, save_frames, write_png};
pub use synthetic::{generate_synthetic_scene, MotionClass, SceneSpec, SpriteSpec};

/// Ordered frames of one clip, each `3×H×W` with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Tensor<f32>>,
    pub frame_rate: f64,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor<f32>>, frame_rate: f64, source_id: impl Into<String>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if first.rank() != 3 {
                return Err(Error::ingestion(format!(
                    "frames must be CxHxW, got {:?}",
                    first.shape()
                )));
            }
            if let Some(bad) = frames.iter().position(|f| f.shape() != first.shape()) {
                return Err(Error::ingestion(format!(
                    "frame {bad} has shape {:?}, expected {:?}",
                    frames[bad].shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self {
            frames,
            frame_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(C, H, W)` of every frame.
    pub fn frame_shape(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(|f| (f.dim(0), f.dim(1), f.dim(2)))
    }
}

/// Axis-aligned affine map `x' = sx*x + tx`, `y' = sy*y + ty` in
/// continuous pixel coordinates (pixel `j` spans `[j, j+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        sx: 1.0,
        sy: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.sx * x + self.tx, self.sy * y + self.ty)
    }

    pub fn inverse(&self) -> Affine2 {
        Affine2 {
            sx: 1.0 / self.sx,
            sy: 1.0 / self.sy,
            tx: -self.tx / self.sx,
            ty: -self.ty / self.sy,
        }
    }

    /// Box corners mapped and re-ordered (a negative scale mirrors).
    pub fn apply_box(&self, b: Box2) -> Box2 {
        let (x0, y0) = self.apply(b.x_min as f64, b.y_min as f64);
        let (x1, y1) = self.apply(b.x_max as f64, b.y_max as f64);
        Box2 {
            x_min: x0.min(x1) as f32,
            y_min: y0.min(y1) as f32,
            x_max: x0.max(x1) as f32,
            y_max: y0.max(y1) as f32,
        }
    }
}

/// Resample a `C×H×W` frame so that output pixel `(y, x)` reads the source
/// at `map.inverse()` of its center, bilinearly, with `fill` outside the
/// source.
pub fn warp_affine(frame: &Tensor<f32>, out_h: usize, out_w: usize, map: &Affine2, fill: f32) -> Tensor<f32> {
    let (c, h, w) = (frame.dim(0), frame.dim(1), frame.dim(2));
    let inv = map.inverse();
    let mut out = Tensor::full(&[c, out_h, out_w], fill);
    let src = frame.data();
    let dst = out.data_mut();
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
            if sx < 0.0 || sy < 0.0 || sx > w as f64 || sy > h as f64 {
                continue;
            }
            // continuous -> index coordinates, clamped to the valid range
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
            for ch in 0..c {
                let base = ch * h * w;
                let top = src[base + y0 * w + x0] * (1.0 - ax) + src[base + y0 * w + x1] * ax;
                let bot = src[base + y1 * w + x0] * (1.0 - ax) + src[base + y1 * w + x1] * ax;
                dst[(ch * out_h + y) * out_w + x] = top * (1.0 - ay) + bot * ay;
            }
        }
    }
    out
}

/// Uniform scale to fit `target_h × target_w`, centered, padded with
/// `pad_value`. Returns the frame and the pixel map that was applied;
/// annotations, when given, are transformed in place by the same map.
pub fn resize_letterbox(
    frame: &Tensor<f32>,
    target_h: usize,
    target_w: usize,
    pad_value: f32,
    annotations: Option<&mut ActorAnnotations>,
) -> Result<(Tensor<f32>, Affine2)> {
    if frame.rank() != 3 || frame.dim(1) == 0 || frame.dim(2) == 0 {
        return Err(Error::ingestion(format!(
            "letterbox: degenerate frame of shape {:?}",
            frame.shape()
        )));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::config("letterbox: target dims must be positive"));
    }
    let map = letterbox_map(frame.dim(1), frame.dim(2), target_h, target_w);
    let out = if map == Affine2::IDENTITY {
        frame.clone()
    } else {
        warp_affine(frame, target_h, target_w, &map, pad_value)
    };
    if let Some(ann) = annotations {
        ann.transform(&map, (frame.dim(1), frame.dim(2)), (target_h, target_w));
    }
    Ok((out, map))
}

/// The letterbox map for a source of `h × w` pixels.
pub fn letterbox_map(h: usize, w: usize, target_h: usize, target_w: usize) -> Affine2 {
    let scale = (target_h as f64 / h as f64).min(target_w as f64 / w as f64);
    let content_w = (w as f64 * scale).round();
    let content_h = (h as f64 * scale).round();
    let pad_x = ((target_w as f64 - content_w) / 2.0).floor();
    let pad_y = ((target_h as f64 - content_h) / 2.0).floor();
    Affine2 {
        sx: scale,
        sy: scale,
        tx: pad_x,
        ty: pad_y,
    }
}

/// `[0, 255] -> [-1, 1]` via `(x / 255 - 0.5) * 2`.
pub fn normalize(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    if let Some(v) = frame.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::ingestion(format!(
            "normalize: pixel value {v} outside [0, 255]"
        )));
    }
    Ok(frame.map(|v| (v / 255.0 - 0.5) * 2.0))
}

/// Inverse of [`normalize`].
pub fn denormalize(frame: &Tensor<f32>) -> Tensor<f32> {
    frame.map(|v| (v / 2.0 + 0.5) * 255.0)
}
