//! Sparse weighted temporal attention: flows between consecutive sampled
//! frames are reduced to magnitudes, combined with fixed weights into a
//! single map per snippet, optionally restricted to actor boxes, and
//! multiplied into every frame of the snippet.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_magnitude, luma_for_flow, FlowEstimator, FlowField, FlowParams, IntensityRange, MIN_FRAME_SIDE};
use crate::media::Box2;
use crate::plane::Plane;
use crate::sampler::SegmentPlan;
use crate::tensor::Tensor;

/// Default weight applied to each flow magnitude.
pub const DEFAULT_FLOW_WEIGHT: f32 = 0.033;

/// One non-learnable weight per consecutive pair of sampled frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f32>);

impl WeightVector {
    pub fn new(weights: Vec<f32>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::config(format!("attention weight {i} is not finite")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(len: usize, value: f32) -> Result<Self> {
        Self::new(vec![value; len])
    }

    /// [`DEFAULT_FLOW_WEIGHT`] for each of the `segments - 1` flows.
    pub fn default_for(segments: usize) -> Self {
        Self(vec![DEFAULT_FLOW_WEIGHT; segments.saturating_sub(1)])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Single nonnegative map per snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub values: Plane,
    /// Snippet-relative indices of the frames the flows came from.
    pub source_indices: Vec<usize>,
    pub weights_used: Vec<f32>,
}

impl AttentionMap {
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSnippet {
    pub frames: Vec<Tensor<f32>>,
    pub attention: AttentionMap,
}

/// Flow `i` runs from frame `i` to frame `i + 1`; the pairs are estimated
/// in parallel and returned in order.
pub fn pairwise_flows<E: FlowEstimator + ?Sized>(frames: &[Plane], estimator: &E) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        return Err(Error::config(format!(
            "pairwise_flows: need at least 2 sampled frames, got {}",
            frames.len()
        )));
    }
    frames
        .par_windows(2)
        .map(|pair| estimator.estimate(&pair[0], &pair[1]))
        .collect()
}

/// `Σ_i w_i · |flow_i|`, accumulated in `f64` in flow order.
pub fn weighted_attention(flows: &[FlowField], weights: &WeightVector) -> Result<AttentionMap> {
    if flows.len() != weights.len() {
        return Err(Error::config(format!(
            "weighted_attention: {} flows but {} weights",
            flows.len(),
            weights.len()
        )));
    }
    let Some(first) = flows.first() else {
        return Err(Error::config("weighted_attention: no flows"));
    };
    let (h, w) = first.dims();
    if let Some(i) = flows.iter().position(|f| f.dims() != (h, w)) {
        return Err(Error::config(format!(
            "weighted_attention: flow {i} is {:?}, expected {:?}",
            flows[i].dims(),
            (h, w)
        )));
    }
    let mut acc = vec![0f64; h * w];
    for (flow, &wt) in flows.iter().zip(weights.as_slice()) {
        let mag = flow_magnitude(flow);
        for (a, &m) in acc.iter_mut().zip(mag.data()) {
            *a += wt as f64 * m as f64;
        }
    }
    let values = Plane::new(h, w, acc.into_iter().map(|v| v as f32).collect())?;
    Ok(AttentionMap {
        values,
        source_indices: (0..=flows.len()).collect(),
        weights_used: weights.as_slice().to_vec(),
    })
}

/// Whether pixel `(y, x)` has its center inside `b`.
fn covers(b: &Box2, y: usize, x: usize) -> bool {
    let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
    b.x_min <= cx && cx < b.x_max && b.y_min <= cy && cy < b.y_max
}

/// Zero every pixel whose center lies outside the union of `boxes`. Boxes
/// are clamped to the plane and dropped if nothing remains; an empty set
/// leaves the map unchanged.
pub fn roi_restrict(attention: &AttentionMap, boxes: &[Box2]) -> AttentionMap {
    let (h, w) = attention.dims();
    let kept: Vec<Box2> = boxes
        .iter()
        .map(|b| b.clamp_to(h as f32, w as f32))
        .filter(|b| b.is_valid())
        .collect();
    if boxes.is_empty() {
        return attention.clone();
    }
    let mut values = Plane::filled(h, w, 0.0);
    for b in &kept {
        let y0 = b.y_min.floor().max(0.0) as usize;
        let y1 = (b.y_max.ceil() as usize).min(h);
        let x0 = b.x_min.floor().max(0.0) as usize;
        let x1 = (b.x_max.ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                if covers(b, y, x) {
                    values.set(y, x, attention.values.get(y, x));
                }
            }
        }
    }
    AttentionMap {
        values,
        ..attention.clone()
    }
}

/// Multiply every channel of every frame by the attention map.
pub fn fuse(frames: &[Tensor<f32>], attention: &AttentionMap) -> Result<FusedSnippet> {
    let mut fused = Vec::new();
    fuse_into(frames, attention, &mut fused)?;
    Ok(FusedSnippet {
        frames: fused,
        attention: attention.clone(),
    })
}

/// As [`fuse`], writing into `out` and reusing its buffers when the shapes
/// already match.
pub fn fuse_into(frames: &[Tensor<f32>], attention: &AttentionMap, out: &mut Vec<Tensor<f32>>) -> Result<()> {
    let (h, w) = attention.dims();
    let mask = attention.values.data();
    for (t, f) in frames.iter().enumerate() {
        if f.rank() != 3 || f.dim(1) != h || f.dim(2) != w {
            return Err(Error::config(format!(
                "fuse: frame {t} has shape {:?}, attention is {h}x{w}",
                f.shape()
            )));
        }
    }
    out.truncate(frames.len());
    for (t, f) in frames.iter().enumerate() {
        if out.get(t).is_none_or(|o| o.shape() != f.shape()) {
            let blank = Tensor::zeros(f.shape());
            if t < out.len() {
                out[t] = blank;
            } else {
                out.push(blank);
            }
        }
        for (dst, src) in out[t].data_mut().chunks_mut(h * w).zip(f.data().chunks(h * w)) {
            for ((o, &x), &a) in dst.iter_mut().zip(src).zip(mask) {
                *o = a * x;
            }
        }
    }
    Ok(())
}

/// Where flows are computed when actor boxes are known.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Full-frame flow, then the map is masked to the boxes.
    #[default]
    FullFrame,
    /// Flow inside each actor's crop, pasted back into an otherwise zero map.
    PerActorCrop,
}

/// Sampling, flow, weighting, ROI restriction and fusion for one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPipeline {
    pub segments: usize,
    pub weights: WeightVector,
    pub flow: FlowParams,
    pub mode: AttentionMode,
}

impl Default for AttentionPipeline {
    fn default() -> Self {
        Self::new(3)
    }
}

impl AttentionPipeline {
    pub fn new(segments: usize) -> Self {
        Self {
            segments,
            weights: WeightVector::default_for(segments),
            flow: FlowParams::default(),
            mode: AttentionMode::FullFrame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments < 2 {
            return Err(Error::config(format!(
                "attention needs at least 2 segments, got {}",
                self.segments
            )));
        }
        if self.weights.len() != self.segments - 1 {
            return Err(Error::config(format!(
                "{} segments need {} weights, got {}",
                self.segments,
                self.segments - 1,
                self.weights.len()
            )));
        }
        self.flow.validate()
    }

    /// Attention map for a snippet. `boxes` is the snippet's ROI set in
    /// frame pixels; empty means full frame.
    pub fn attention(&self, snippet: &[Tensor<f32>], boxes: &[Box2], seed: u64) -> Result<AttentionMap> {
        self.attention_with(snippet, boxes, seed, &self.flow)
    }

    /// As [`AttentionPipeline::attention`], with a caller-supplied flow estimator.
    pub fn attention_with<E: FlowEstimator + ?Sized>(
        &self,
        snippet: &[Tensor<f32>],
        boxes: &[Box2],
        seed: u64,
        estimator: &E,
    ) -> Result<AttentionMap> {
        self.validate()?;
        let plan = SegmentPlan::new(snippet.len(), self.segments)?;
        let sampled = plan.sample(seed);
        let range = if snippet.iter().any(|f| IntensityRange::detect(f) == IntensityRange::Signed) {
            IntensityRange::Signed
        } else {
            IntensityRange::Byte
        };
        let luma = sampled
            .indices
            .iter()
            .map(|&i| luma_for_flow(&snippet[i], range))
            .collect::<Result<Vec<_>>>()?;
        let mut map = match self.mode {
            AttentionMode::FullFrame => {
                let flows = pairwise_flows(&luma, estimator)?;
                roi_restrict(&weighted_attention(&flows, &self.weights)?, boxes)
            }
            AttentionMode::PerActorCrop => self.per_actor(&luma, boxes, estimator)?,
        };
        map.source_indices = sampled.indices;
        Ok(map)
    }

    fn per_actor<E: FlowEstimator + ?Sized>(&self, luma: &[Plane], boxes: &[Box2], estimator: &E) -> Result<AttentionMap> {
        let (h, w) = luma[0].dims();
        if boxes.is_empty() {
            let flows = pairwise_flows(luma, estimator)?;
            return weighted_attention(&flows, &self.weights);
        }
        let mut values = Plane::filled(h, w, 0.0);
        for b in boxes {
            let b = b.clamp_to(h as f32, w as f32);
            if !b.is_valid() {
                continue;
            }
            let (y0, y1) = crop_span(b.y_min, b.y_max, h);
            let (x0, x1) = crop_span(b.x_min, b.x_max, w);
            let crops: Vec<Plane> = luma
                .iter()
                .map(|p| Plane::from_fn(y1 - y0, x1 - x0, |y, x| p.get(y0 + y, x0 + x)))
                .collect();
            let flows = pairwise_flows(&crops, estimator)?;
            let local = weighted_attention(&flows, &self.weights)?;
            for y in y0..y1 {
                for x in x0..x1 {
                    if covers(&b, y, x) {
                        let v = local.values.get(y - y0, x - x0).max(values.get(y, x));
                        values.set(y, x, v);
                    }
                }
            }
        }
        Ok(AttentionMap {
            values,
            source_indices: Vec::new(),
            weights_used: self.weights.as_slice().to_vec(),
        })
    }

    /// Attention followed by fusion with every frame of the snippet.
    pub fn run(&self, snippet: &[Tensor<f32>], boxes: &[Box2], seed: u64) -> Result<FusedSnippet> {
        let map = self.attention(snippet, boxes, seed)?;
        fuse(snippet, &map)
    }
}

/// Integer pixel span covering `[lo, hi)`, widened to the minimum flow
/// input side where the frame allows.
fn crop_span(lo: f32, hi: f32, side: usize) -> (usize, usize) {
    let mut a = lo.floor().max(0.0) as usize;
    let mut b = (hi.ceil() as usize).min(side);
    let want = MIN_FRAME_SIDE.min(side);
    while b - a < want {
        a = a.saturating_sub(1);
        if b - a < want && b < side {
            b += 1;
        }
    }
    (a, b)
}

/// Heat colouring of `plane` scaled by its maximum, blended over `frame`
/// (byte range) with opacity `alpha` when given. Output is `3×H×W` in
/// `[0, 255]`.
pub fn heat_overlay(plane: &Plane, frame: Option<&Tensor<f32>>, alpha: f32) -> Result<Tensor<f32>> {
    let (h, w) = plane.dims();
    if let Some(f) = frame {
        if f.shape() != [3, h, w] {
            return Err(Error::config(format!(
                "overlay: frame shape {:?} does not match map {h}x{w}",
                f.shape()
            )));
        }
    }
    let peak = plane.max_abs();
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let rgb = heat_color(plane.get(y, x).abs() * scale);
            for (c, &v) in rgb.iter().enumerate() {
                let v = match frame {
                    Some(f) => alpha * v + (1.0 - alpha) * f.at(&[c, y, x]),
                    None => v,
                };
                out.set(&[c, y, x], v.clamp(0.0, 255.0));
            }
        }
    }
    Ok(out)
}

/// Black → red → yellow → white ramp for `t ∈ [0, 1]`.
fn heat_color(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    [
        255.0 * t.min(1.0),
        255.0 * (t - 1.0).clamp(0.0, 1.0),
        255.0 * (t - 2.0).clamp(0.0, 1.0),
    ]
}
