//! Timing of the attention pipeline's phases over a grid of snippet
//! lengths, segment counts and frame sides.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{fuse, fuse_into, pairwise_flows, weighted_attention, AttentionMap, AttentionPipeline};
use crate::error::{Error, Result};
use crate::flow::{luma_for_flow, FlowEstimator, FlowField, FlowParams, IntensityRange};
use crate::plane::Plane;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchCell {
    pub t: usize,
    pub k: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Flow,
    Attention,
    Fuse,
    Total,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Flow => "flow",
            Phase::Attention => "attention",
            Phase::Fuse => "fuse",
            Phase::Total => "total",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub phase: Phase,
    /// Median seconds per pipeline invocation.
    pub seconds: f64,
    /// Flow estimations per pipeline invocation.
    pub flow_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Timed runs per phase; the median is reported.
    pub runs: usize,
    /// Repetitions are raised until one run lasts at least this long.
    pub min_run_seconds: f64,
    pub flow: FlowParams,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            min_run_seconds: 0.02,
            flow: FlowParams::default(),
            seed: 0,
        }
    }
}

/// Flow estimator that counts its invocations.
pub struct CountingEstimator<E> {
    pub inner: E,
    calls: AtomicUsize,
}

impl<E: FlowEstimator> CountingEstimator<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<E: FlowEstimator> FlowEstimator for CountingEstimator<E> {
    fn estimate(&self, a: &Plane, b: &Plane) -> Result<FlowField> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.estimate(a, b)
    }
}

/// `t` normalized `3×d×d` frames of a smooth texture drifting one pixel
/// per frame.
pub fn drifting_snippet(t: usize, d: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = SplitMix64::new(seed);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.0, std::f64::consts::TAU)))
        .collect();
    (0..t)
        .map(|i| {
            let shift = i as f64;
            Tensor::from_fn(&[3, d, d], |idx| {
                let (y, x) = ((idx / d) % d, idx % d);
                let s: f64 = waves
                    .iter()
                    .map(|&(fx, fy, p)| (fx * (x as f64 - shift) + fy * y as f64 + p).sin())
                    .sum();
                (s / 3.0 * 0.8) as f32
            })
        })
        .collect()
}

/// Repetitions of `f` needed for one timed run to last `min_run_seconds`,
/// after one warm-up call.
fn calibrate(min_run_seconds: f64, f: &mut dyn FnMut() -> Result<()>) -> Result<usize> {
    f()?;
    let mut reps = 1usize;
    loop {
        let elapsed = time_reps(reps, f)?;
        if elapsed >= min_run_seconds || reps >= 1 << 20 {
            return Ok(reps);
        }
        let factor = if elapsed > 0.0 {
            (min_run_seconds / elapsed * 1.2).ceil() as usize
        } else {
            16
        };
        reps = reps.saturating_mul(factor.clamp(2, 1024));
    }
}

fn time_reps(reps: usize, f: &mut dyn FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64())
}

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Median seconds per call of `f` over `runs` timed runs, each lasting at
/// least `min_run_seconds`.
pub fn time_median(runs: usize, min_run_seconds: f64, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let reps = calibrate(min_run_seconds, &mut f)?;
    let samples = (0..runs.max(1))
        .map(|_| Ok(time_reps(reps, &mut f)? / reps as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(samples))
}

/// Divide every round of samples (`samples[job][round]`) by that round's
/// machine speed: the median over jobs of each sample relative to its job's
/// median. Shared hosts switch between speed regimes for seconds at a time,
/// which would otherwise land different jobs' medians in different regimes.
fn normalize_rounds(samples: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let medians: Vec<f64> = samples.iter().map(|s| median(s.clone())).collect();
    let rounds = samples.first().map_or(0, Vec::len);
    let speed: Vec<f64> = (0..rounds)
        .map(|r| {
            let rel = samples
                .iter()
                .zip(&medians)
                .filter(|(_, &m)| m > 0.0)
                .map(|(s, m)| s[r] / m)
                .collect::<Vec<_>>();
            if rel.is_empty() {
                1.0
            } else {
                median(rel)
            }
        })
        .collect();
    samples
        .into_iter()
        .map(|s| s.iter().zip(&speed).map(|(v, f)| v / f).collect())
        .collect()
}

/// Bytes of snippet copies (and as many output buffers) the fuse phase
/// rotates through. Fusing the same snippet over and over keeps short
/// snippets cache-resident while long ones spill, which skews the T
/// scaling; cycling through this much data keeps every cell equally cold.
const COLD_WORKING_SET_BYTES: usize = 32 << 20;

/// Inputs of one benchmark cell, prepared outside the timed region.
struct CellState {
    cell: BenchCell,
    pipeline: AttentionPipeline,
    frames: Vec<Tensor<f32>>,
    /// Copies of `frames` that the fuse phase cycles through.
    fuse_inputs: Vec<Vec<Tensor<f32>>>,
    luma: Vec<Plane>,
    flows: Vec<FlowField>,
    map: AttentionMap,
    flow_calls: usize,
}

type Job<'a> = (BenchCell, Phase, usize, Box<dyn FnMut() -> Result<()> + 'a>);

/// Time every phase for every cell. Runs are interleaved round-robin
/// across all (cell, phase) jobs so that machine load drifting during the
/// benchmark affects every cell alike.
pub fn benchmark_wta(cells: &[BenchCell], options: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if options.runs < 5 {
        return Err(Error::config(format!("benchmark needs at least 5 runs, got {}", options.runs)));
    }
    let estimator = CountingEstimator::new(options.flow);
    let mut states = Vec::with_capacity(cells.len());
    for &cell in cells {
        let BenchCell { t, k, d } = cell;
        let pipeline = AttentionPipeline {
            flow: options.flow,
            ..AttentionPipeline::new(k)
        };
        pipeline.validate()?;
        let frames = drifting_snippet(t, d, options.seed);
        let sampled = crate::sampler::SegmentPlan::new(t, k)?.sample(options.seed).indices;
        let luma = sampled
            .iter()
            .map(|&i| luma_for_flow(&frames[i], IntensityRange::Signed))
            .collect::<Result<Vec<_>>>()?;
        estimator.reset();
        pipeline.attention_with(&frames, &[], options.seed, &estimator)?;
        let flow_calls = estimator.calls();
        let flows = pairwise_flows(&luma, &options.flow)?;
        let map = weighted_attention(&flows, &pipeline.weights)?;
        let snippet_bytes = t * 3 * d * d * std::mem::size_of::<f32>();
        let copies = COLD_WORKING_SET_BYTES.div_ceil(snippet_bytes.max(1));
        states.push(CellState {
            cell,
            pipeline,
            fuse_inputs: vec![frames.clone(); copies],
            frames,
            luma,
            flows,
            map,
            flow_calls,
        });
    }

    let seed = options.seed;
    let flow = &options.flow;
    let mut jobs: Vec<Job> = Vec::new();
    for s in &states {
        let mut flow_job: Box<dyn FnMut() -> Result<()>> = Box::new(move || pairwise_flows(&s.luma, flow).map(drop));
        let mut attention_job: Box<dyn FnMut() -> Result<()>> =
            Box::new(move || weighted_attention(&s.flows, &s.pipeline.weights).map(drop));
        let mut next = 0;
        let mut outputs = vec![Vec::new(); s.fuse_inputs.len()];
        let mut fuse_job: Box<dyn FnMut() -> Result<()>> = Box::new(move || {
            next = (next + 1) % s.fuse_inputs.len();
            fuse_into(&s.fuse_inputs[next], &s.map, &mut outputs[next])
        });
        let mut total_job: Box<dyn FnMut() -> Result<()>> = Box::new(move || {
            let map = s.pipeline.attention_with(&s.frames, &[], seed, flow)?;
            fuse(&s.frames, &map).map(drop)
        });
        jobs.push((s.cell, Phase::Flow, calibrate(options.min_run_seconds, &mut flow_job)?, flow_job));
        jobs.push((s.cell, Phase::Attention, calibrate(options.min_run_seconds, &mut attention_job)?, attention_job));
        jobs.push((s.cell, Phase::Fuse, calibrate(options.min_run_seconds, &mut fuse_job)?, fuse_job));
        jobs.push((s.cell, Phase::Total, calibrate(options.min_run_seconds, &mut total_job)?, total_job));
    }

    let mut samples = vec![Vec::with_capacity(options.runs); jobs.len()];
    for _ in 0..options.runs {
        for (job, out) in jobs.iter_mut().zip(&mut samples) {
            let reps = job.2;
            out.push(time_reps(reps, &mut job.3)? / reps as f64);
        }
    }
    let samples = normalize_rounds(samples);
    Ok(jobs
        .iter()
        .zip(samples)
        .map(|((cell, phase, _, _), samples)| {
            let state = states.iter().find(|s| s.cell == *cell).expect("job cell has a state");
            BenchRecord {
                t: cell.t,
                k: cell.k,
                d: cell.d,
                phase: *phase,
                seconds: median(samples),
                flow_calls: state.flow_calls,
            }
        })
        .collect())
}

/// CSV with header `T,K,d,phase,seconds`.
pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("T,K,d,phase,seconds\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{:.9}\n", r.t, r.k, r.d, r.phase, r.seconds));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub base: BenchCell,
    pub scaled: BenchCell,
    pub ratio: f64,
    pub low: f64,
    pub high: f64,
    pub pass: bool,
}

fn seconds(records: &[BenchRecord], cell: BenchCell, phase: Phase) -> Option<f64> {
    records
        .iter()
        .find(|r| r.t == cell.t && r.k == cell.k && r.d == cell.d && r.phase == phase)
        .map(|r| r.seconds)
}

/// Scaling checks over every pair of cells where `T` or `d` doubles with
/// the other coordinates fixed, plus the flow-call count of every cell.
pub fn scaling_verdicts(records: &[BenchRecord]) -> Vec<Verdict> {
    let mut cells: Vec<BenchCell> = records
        .iter()
        .map(|r| BenchCell { t: r.t, k: r.k, d: r.d })
        .collect();
    cells.dedup();
    let mut out = Vec::new();
    let mut check = |name: &str, base: BenchCell, scaled: BenchCell, phase: Phase, low: f64, high: f64| {
        if let (Some(a), Some(b)) = (seconds(records, base, phase), seconds(records, scaled, phase)) {
            let ratio = b / a;
            out.push(Verdict {
                check: name.to_string(),
                base,
                scaled,
                ratio,
                low,
                high,
                pass: (low..=high).contains(&ratio),
            });
        }
    };
    for &a in &cells {
        for &b in &cells {
            if b.k == a.k && b.d == a.d && b.t == 2 * a.t {
                check("fuse_time_doubles_with_T", a, b, Phase::Fuse, 1.5, 2.5);
                check("flow_time_independent_of_T", a, b, Phase::Flow, 0.75, 1.25);
            }
            if b.k == a.k && b.t == a.t && b.d == 2 * a.d {
                check("total_time_quadruples_with_d", a, b, Phase::Total, 2.8, 5.2);
            }
        }
    }
    for &c in &cells {
        if let Some(r) = records.iter().find(|r| r.t == c.t && r.k == c.k && r.d == c.d) {
            let calls = r.flow_calls as f64;
            let want = (c.k - 1) as f64;
            out.push(Verdict {
                check: "flow_calls_equal_K_minus_1".into(),
                base: c,
                scaled: c,
                ratio: calls,
                low: want,
                high: want,
                pass: calls == want,
            });
        }
    }
    out
}
