//! Turning a clip into a model-ready snippet: window choice, augmentation,
//! letterboxing, normalization, attention and fusion.

use crate::attention::{fuse, AttentionPipeline};
use crate::error::{Error, Result};
use crate::media::{augment, normalize, resize_letterbox, AugmentationConfig, Box2};
use crate::model::SnippetBatch;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

use super::dataset::ClipHandle;

const WINDOW_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const SAMPLER_STREAM: u64 = 3;

/// Byte value that normalizes to zero.
const PAD_VALUE: f32 = 127.5;

/// Everything snippet preparation needs besides the clip and seed.
#[derive(Debug, Clone)]
pub struct PrepConfig {
    pub snippet_length: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// `None` feeds normalized raw frames to the model.
    pub attention: Option<AttentionPipeline>,
    /// Applied only to training snippets.
    pub augmentation: Option<AugmentationConfig>,
}

#[derive(Debug, Clone)]
pub struct PreparedSnippet {
    pub clip_id: String,
    /// `T` frames of `3×H×W`, normalized and (optionally) fused.
    pub frames: Vec<Tensor<f32>>,
    pub actors: usize,
    /// `T·N` slots in model input pixels.
    pub boxes: Vec<Option<Box2>>,
    /// `T·N` class indices, `None` where absent.
    pub labels: Vec<Option<usize>>,
    /// Snippet-relative sampled frame indices (empty without attention).
    pub sampled: Vec<usize>,
}

/// Prepare one snippet. Training snippets get a random window and
/// augmentation; evaluation snippets use the centered window. All
/// randomness derives from `seed`.
pub fn prepare_snippet(clip: &ClipHandle, cfg: &PrepConfig, seed: u64, train: bool) -> Result<PreparedSnippet> {
    let t = cfg.snippet_length;
    if clip.len() < t {
        return Err(Error::config(format!(
            "clip {} has {} frames, snippets need {t}",
            clip.id,
            clip.len()
        )));
    }
    let slack = clip.len() - t;
    let start = if train {
        SplitMix64::new(derive_seed(seed, WINDOW_STREAM)).below(slack as u64 + 1) as usize
    } else {
        slack / 2
    };
    let mut frames = clip.read_frames(start, t)?;
    let mut ann = clip.annotations.window(start, t);
    if let (true, Some(aug)) = (train, &cfg.augmentation) {
        let aug = AugmentationConfig {
            seed: derive_seed(seed, AUGMENT_STREAM),
            ..*aug
        };
        (frames, ann, _) = augment(&frames, &ann, &aug)?;
    }
    let mut resized = Vec::with_capacity(t);
    for (i, f) in frames.iter().enumerate() {
        let target = if i == 0 { Some(&mut ann) } else { None };
        let (r, _) = resize_letterbox(f, cfg.input_height, cfg.input_width, PAD_VALUE, target)?;
        resized.push(normalize(&r)?);
    }
    let (frames, sampled) = match &cfg.attention {
        Some(pipeline) => {
            let rois: Vec<Box2> = ann.actor_extents().into_iter().flatten().collect();
            let map = pipeline.attention(&resized, &rois, derive_seed(seed, SAMPLER_STREAM))?;
            let sampled = map.source_indices.clone();
            (fuse(&resized, &map)?.frames, sampled)
        }
        None => (resized, Vec::new()),
    };
    let n = ann.num_actors();
    let mut boxes = Vec::with_capacity(t * n);
    let mut labels = Vec::with_capacity(t * n);
    for ti in 0..t {
        for ni in 0..n {
            let present = ann.is_present(ti, ni);
            boxes.push(present.then(|| ann.box_at(ti, ni)));
            labels.push(if present { ann.label_at(ti, ni) } else { None });
        }
    }
    Ok(PreparedSnippet {
        clip_id: clip.id.clone(),
        frames,
        actors: n,
        boxes,
        labels,
        sampled,
    })
}

/// Stack snippets into one batch, padding actor slots to the largest
/// count. Targets are one-hot over `classes`.
pub fn assemble_batch(snippets: &[PreparedSnippet], classes: usize) -> Result<SnippetBatch<f32>> {
    let Some(first) = snippets.first() else {
        return Err(Error::config("cannot assemble an empty batch"));
    };
    let t = first.frames.len();
    let shape = first.frames[0].shape().to_vec();
    let n = snippets.iter().map(|s| s.actors).max().unwrap_or(0).max(1);
    let b = snippets.len();
    let mut frames = Vec::with_capacity(b * t * shape.iter().product::<usize>());
    let mut boxes = Vec::with_capacity(b * t * n);
    let mut targets = vec![0f32; b * t * n * classes];
    for (bi, s) in snippets.iter().enumerate() {
        if s.frames.len() != t || s.frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::config(format!("snippet {} does not match the batch shape", s.clip_id)));
        }
        for f in &s.frames {
            frames.extend_from_slice(f.data());
        }
        for ti in 0..t {
            for ni in 0..n {
                let slot = (ni < s.actors).then(|| ti * s.actors + ni);
                let bx = slot.and_then(|i| s.boxes[i]);
                let label = slot.and_then(|i| s.labels[i]);
                let label = match (bx, label) {
                    (Some(_), Some(l)) if l >= classes => {
                        return Err(Error::config(format!(
                            "clip {}: label {l} outside {classes} classes",
                            s.clip_id
                        )))
                    }
                    (Some(_), Some(l)) => Some(l),
                    _ => None,
                };
                boxes.push(label.and(bx));
                if let Some(l) = label {
                    targets[((bi * t + ti) * n + ni) * classes + l] = 1.0;
                }
            }
        }
    }
    let mut frame_shape = vec![b * t];
    frame_shape.extend_from_slice(&shape);
    Ok(SnippetBatch {
        frames: Tensor::from_vec(&frame_shape, frames)?,
        batch: b,
        time: t,
        actors: n,
        boxes,
        targets: Tensor::from_vec(&[b, t, n, classes], targets)?,
    })
}
