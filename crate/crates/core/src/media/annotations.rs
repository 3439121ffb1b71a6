use serde::{Deserialize, Serialize};

use super::Affine2;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label stored in padded actor slots.
pub const PAD_LABEL: usize = usize::MAX;
/// Joints per pose skeleton.
pub const NUM_JOINTS: usize = 18;

/// `(x_min, y_min, x_max, y_max)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Box2 {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl Box2 {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f32 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn clamp_to(&self, height: f32, width: f32) -> Box2 {
        Box2 {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    pub fn union(&self, other: &Box2) -> Box2 {
        Box2 {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn iou(&self, other: &Box2) -> f32 {
        let inter = Box2 {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        }
        .area();
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Per-frame actor boxes, labels and optional 18-joint skeletons.
///
/// Slot `n` refers to the same actor in every frame. Absent slots have
/// `presence == false` and label [`PAD_LABEL`]; losses and metrics skip
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorAnnotations {
    frames: usize,
    actors: usize,
    boxes: Vec<Box2>,
    labels: Vec<usize>,
    presence: Vec<bool>,
    /// `T×N×18` joints as normalized `(x, y)`.
    keypoints: Option<Vec<[f32; 2]>>,
    pub classes: Vec<String>,
    pub fps: f64,
}

impl ActorAnnotations {
    pub fn empty(frames: usize, actors: usize, classes: Vec<String>) -> Self {
        Self {
            frames,
            actors,
            boxes: vec![Box2::default(); frames * actors],
            labels: vec![PAD_LABEL; frames * actors],
            presence: vec![false; frames * actors],
            keypoints: None,
            classes,
            fps: 30.0,
        }
    }

    /// One actor with the same label in every frame.
    pub fn single_track(boxes: &[Box2], label: usize, classes: Vec<String>) -> Self {
        let mut a = Self::empty(boxes.len(), 1, classes);
        for (t, b) in boxes.iter().enumerate() {
            a.set_slot(t, 0, *b, label);
        }
        a
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_actors(&self) -> usize {
        self.actors
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn idx(&self, t: usize, n: usize) -> usize {
        t * self.actors + n
    }

    pub fn set_slot(&mut self, t: usize, n: usize, b: Box2, label: usize) {
        let i = self.idx(t, n);
        self.boxes[i] = b;
        self.labels[i] = label;
        self.presence[i] = true;
    }

    pub fn clear_slot(&mut self, t: usize, n: usize) {
        let i = self.idx(t, n);
        self.presence[i] = false;
        self.labels[i] = PAD_LABEL;
        self.boxes[i] = Box2::default();
    }

    pub fn box_at(&self, t: usize, n: usize) -> Box2 {
        self.boxes[self.idx(t, n)]
    }

    pub fn label_at(&self, t: usize, n: usize) -> Option<usize> {
        let i = self.idx(t, n);
        self.presence[i].then_some(self.labels[i])
    }

    pub fn is_present(&self, t: usize, n: usize) -> bool {
        self.presence[self.idx(t, n)]
    }

    pub fn presence(&self) -> &[bool] {
        &self.presence
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn boxes(&self) -> &[Box2] {
        &self.boxes
    }

    pub fn keypoints(&self) -> Option<&[[f32; 2]]> {
        self.keypoints.as_deref()
    }

    pub fn set_keypoints(&mut self, kp: Vec<[f32; 2]>) -> Result<()> {
        if kp.len() != self.frames * self.actors * NUM_JOINTS {
            return Err(Error::config("keypoints must hold T*N*18 joints"));
        }
        self.keypoints = Some(kp);
        Ok(())
    }

    /// Joints of actor `n` in frame `t`.
    pub fn skeleton(&self, t: usize, n: usize) -> Option<&[[f32; 2]]> {
        let i = self.idx(t, n) * NUM_JOINTS;
        self.keypoints.as_ref().map(|k| &k[i..i + NUM_JOINTS])
    }

    /// Boxes as a `(T, N, 4)` tensor (zeros in absent slots).
    pub fn boxes_tensor(&self) -> Tensor<f32> {
        let data = self.boxes.iter().flat_map(|b| b.to_array()).collect();
        Tensor::from_vec(&[self.frames, self.actors, 4], data).expect("shape")
    }

    /// Frames `start..start+len` as a new annotation set.
    pub fn window(&self, start: usize, len: usize) -> ActorAnnotations {
        let r = start * self.actors..(start + len) * self.actors;
        ActorAnnotations {
            frames: len,
            actors: self.actors,
            boxes: self.boxes[r.clone()].to_vec(),
            labels: self.labels[r.clone()].to_vec(),
            presence: self.presence[r.clone()].to_vec(),
            keypoints: self
                .keypoints
                .as_ref()
                .map(|k| k[r.start * NUM_JOINTS..r.end * NUM_JOINTS].to_vec()),
            classes: self.classes.clone(),
            fps: self.fps,
        }
    }

    /// Union of each present actor's boxes over all frames.
    pub fn actor_extents(&self) -> Vec<Option<Box2>> {
        (0..self.actors)
            .map(|n| {
                (0..self.frames)
                    .filter(|&t| self.is_present(t, n))
                    .map(|t| self.box_at(t, n))
                    .reduce(|a, b| a.union(&b))
            })
            .collect()
    }

    /// Most frequent label of actor `n` over the present frames (lowest
    /// class index on ties).
    pub fn actor_label(&self, n: usize) -> Option<usize> {
        let mut counts = vec![0usize; self.classes.len().max(1)];
        let mut any = false;
        for t in 0..self.frames {
            if let Some(l) = self.label_at(t, n) {
                if l < counts.len() {
                    counts[l] += 1;
                    any = true;
                }
            }
        }
        if !any {
            return None;
        }
        let best = *counts.iter().max().unwrap();
        counts.iter().position(|&c| c == best)
    }

    /// Apply a pixel map to boxes and keypoints. `src`/`dst` are the
    /// `(height, width)` of the frames before and after, used to
    /// de-normalize and re-normalize the keypoints.
    pub fn transform(&mut self, map: &Affine2, src: (usize, usize), dst: (usize, usize)) {
        for (b, &p) in self.boxes.iter_mut().zip(&self.presence) {
            if p {
                *b = map.apply_box(*b);
            }
        }
        if let Some(kp) = self.keypoints.as_mut() {
            for j in kp.iter_mut() {
                let (x, y) = map.apply(j[0] as f64 * src.1 as f64, j[1] as f64 * src.0 as f64);
                j[0] = (x / dst.1 as f64) as f32;
                j[1] = (y / dst.0 as f64) as f32;
            }
        }
    }

    /// Clip boxes to the frame; slots whose clipped box has no area become
    /// absent. Keypoints are clamped to `[0, 1]`.
    pub fn clip_to_frame(&mut self, height: usize, width: usize) {
        for t in 0..self.frames {
            for n in 0..self.actors {
                if !self.is_present(t, n) {
                    continue;
                }
                let i = self.idx(t, n);
                let c = self.boxes[i].clamp_to(height as f32, width as f32);
                if c.is_valid() {
                    self.boxes[i] = c;
                } else {
                    self.clear_slot(t, n);
                }
            }
        }
        if let Some(kp) = self.keypoints.as_mut() {
            for j in kp.iter_mut() {
                j[0] = j[0].clamp(0.0, 1.0);
                j[1] = j[1].clamp(0.0, 1.0);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in 0..self.frames {
            for n in 0..self.actors {
                if !self.is_present(t, n) {
                    continue;
                }
                let b = self.box_at(t, n);
                if !b.is_valid() {
                    return Err(Error::ingestion(format!(
                        "frame {t} actor {n}: degenerate box {:?}",
                        b.to_array()
                    )));
                }
                let l = self.labels[self.idx(t, n)];
                if l >= self.classes.len() {
                    return Err(Error::ingestion(format!(
                        "frame {t} actor {n}: label {l} but only {} classes",
                        self.classes.len()
                    )));
                }
            }
        }
        if let Some(kp) = &self.keypoints {
            if kp.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::ingestion("keypoints must be normalized to [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn from_file(file: &AnnotationFile) -> Result<Self> {
        let frames = file.frames.len();
        let actors = file.frames.iter().map(|f| f.boxes.len()).max().unwrap_or(0);
        let mut a = Self::empty(frames, actors, file.classes.clone());
        a.fps = file.fps;
        let has_kp = file.frames.iter().any(|f| f.keypoints.is_some());
        let mut kp = vec![[0.0f32; 2]; frames * actors * NUM_JOINTS];
        for (t, f) in file.frames.iter().enumerate() {
            if f.labels.len() != f.boxes.len() {
                return Err(Error::ingestion(format!(
                    "frame {t}: {} boxes but {} labels",
                    f.boxes.len(),
                    f.labels.len()
                )));
            }
            for (n, (b, &l)) in f.boxes.iter().zip(&f.labels).enumerate() {
                a.set_slot(t, n, Box2::new(b[0], b[1], b[2], b[3]), l);
            }
            if let Some(sk) = &f.keypoints {
                for (n, joints) in sk.iter().enumerate().take(actors) {
                    if joints.len() != NUM_JOINTS {
                        return Err(Error::ingestion(format!(
                            "frame {t} actor {n}: expected {NUM_JOINTS} joints, got {}",
                            joints.len()
                        )));
                    }
                    let base = (t * actors + n) * NUM_JOINTS;
                    kp[base..base + NUM_JOINTS].copy_from_slice(joints);
                }
            }
        }
        if has_kp {
            a.keypoints = Some(kp);
        }
        a.validate()?;
        Ok(a)
    }

    pub fn to_file(&self) -> AnnotationFile {
        let frames = (0..self.frames)
            .map(|t| {
                let present: Vec<usize> = (0..self.actors).filter(|&n| self.is_present(t, n)).collect();
                // Slots are positional, so trailing absent slots can be dropped
                // but interior gaps cannot be represented; keep the prefix.
                let upto = present.last().map_or(0, |&n| n + 1);
                FrameAnnotation {
                    boxes: (0..upto).map(|n| self.box_at(t, n).to_array()).collect(),
                    labels: (0..upto)
                        .map(|n| self.label_at(t, n).unwrap_or(0))
                        .collect(),
                    keypoints: self.keypoints.as_ref().map(|_| {
                        (0..upto)
                            .map(|n| self.skeleton(t, n).unwrap().to_vec())
                            .collect()
                    }),
                }
            })
            .collect();
        AnnotationFile {
            fps: self.fps,
            classes: self.classes.clone(),
            frames,
        }
    }
}

/// On-disk `annotations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub fps: f64,
    pub classes: Vec<String>,
    pub frames: Vec<FrameAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub boxes: Vec<[f32; 4]>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<Vec<[f32; 2]>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_json() {
        let json = r#"{"fps": 25.0, "classes": ["walk", "run"],
            "frames": [{"boxes": [[0,0,10,10],[5,5,9,9]], "labels": [1, 0]},
                       {"boxes": [[1,0,11,10]], "labels": [1]}]}"#;
        let file: AnnotationFile = serde_json::from_str(json).unwrap();
        let a = ActorAnnotations::from_file(&file).unwrap();
        assert_eq!((a.num_frames(), a.num_actors()), (2, 2));
        assert_eq!(a.label_at(0, 1), Some(0));
        assert_eq!(a.label_at(1, 1), None);
        assert_eq!(a.actor_label(0), Some(1));
        assert_eq!(a.boxes_tensor().shape(), &[2, 2, 4]);
    }

    #[test]
    fn rejects_inverted_box_and_bad_label() {
        let mut file = AnnotationFile {
            fps: 30.0,
            classes: vec!["a".into()],
            frames: vec![FrameAnnotation {
                boxes: vec![[5.0, 0.0, 1.0, 4.0]],
                labels: vec![0],
                keypoints: None,
            }],
        };
        assert!(ActorAnnotations::from_file(&file).is_err());
        file.frames[0].boxes[0] = [0.0, 0.0, 1.0, 4.0];
        file.frames[0].labels[0] = 3;
        assert!(ActorAnnotations::from_file(&file).is_err());
    }

    #[test]
    fn clipping_drops_boxes_outside() {
        let mut a = ActorAnnotations::single_track(
            &[Box2::new(-20.0, 0.0, -5.0, 5.0), Box2::new(-2.0, 0.0, 4.0, 5.0)],
            0,
            vec!["a".into()],
        );
        a.clip_to_frame(10, 10);
        assert!(!a.is_present(0, 0));
        assert_eq!(a.box_at(1, 0), Box2::new(0.0, 0.0, 4.0, 5.0));
    }
}
