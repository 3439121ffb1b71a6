//! Segment-based sparse temporal sampling.
//!
//! A snippet of `T` frames is split into `K` contiguous segments and one
//! frame is drawn uniformly from each, so downstream work depends on `K`
//! only. Frame indices are 0-based; segment `i` is the half-open range
//! `i*s .. (i+1)*s` with `s = floor(T / K)`, except the last segment which
//! runs to `T` and absorbs the remainder.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentPlan {
    frames: usize,
    segments: Vec<Range<usize>>,
}

impl SegmentPlan {
    pub fn new(frames: usize, segments: usize) -> Result<Self> {
        if segments < 1 || segments > frames {
            return Err(Error::config(format!(
                "need 1 <= K <= T, got T={frames}, K={segments}"
            )));
        }
        let size = frames / segments;
        let ranges = (0..segments)
            .map(|i| {
                let end = if i + 1 == segments { frames } else { (i + 1) * size };
                i * size..end
            })
            .collect();
        Ok(Self {
            frames,
            segments: ranges,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    /// Draw one frame per segment. Segment `i` consumes the `i`-th output of
    /// a [`SplitMix64`] stream seeded with `seed`, mapped to the segment with
    /// the multiply-shift rule.
    pub fn sample(&self, seed: u64) -> SampledSet {
        let mut rng = SplitMix64::new(seed);
        let indices = self
            .segments
            .iter()
            .map(|r| r.start + rng.below(r.len() as u64) as usize)
            .collect();
        SampledSet { indices, seed }
    }
}

/// Shorthand for [`SegmentPlan::new`].
pub fn plan_segments(frames: usize, segments: usize) -> Result<SegmentPlan> {
    SegmentPlan::new(frames, segments)
}

/// Shorthand for [`SegmentPlan::sample`].
pub fn sample_frames(plan: &SegmentPlan, seed: u64) -> SampledSet {
    plan.sample(seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampledSet {
    pub indices: Vec<usize>,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_frames_three_segments() {
        let plan = plan_segments(15, 3).unwrap();
        assert_eq!(plan.segments(), &[0..5, 5..10, 10..15]);
    }

    #[test]
    fn remainder_goes_to_last_segment() {
        let plan = plan_segments(7, 3).unwrap();
        assert_eq!(plan.segments(), &[0..2, 2..4, 4..7]);
    }

    #[test]
    fn single_frame_segments_are_deterministic() {
        let plan = plan_segments(6, 6).unwrap();
        for seed in 0..20 {
            assert_eq!(plan.sample(seed).indices, vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(matches!(plan_segments(3, 4), Err(Error::Config(_))));
        assert!(matches!(plan_segments(3, 0), Err(Error::Config(_))));
    }
}
