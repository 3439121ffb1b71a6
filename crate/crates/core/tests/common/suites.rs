//! Property suites shared by the integration tests and the acceptance
//! runner. Each returns named checks instead of panicking so the runner can
//! report every outcome.

use swta::attention::{fuse, roi_restrict, weighted_attention, AttentionMap, AttentionPipeline, WeightVector};
use swta::flow::{estimate_flow, estimate_flow_traced, FlowField, FlowParams};
use swta::harness::{drifting_snippet, CountingEstimator};
use swta::media::Box2;
use swta::model::{late_fuse, roi_align, RoiAlignConfig};
use swta::plane::Plane;
use swta::rng::SplitMix64;
use swta::sampler::SegmentPlan;
use swta::tensor::{Real, Tensor};

use super::*;

pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn assert_all(checks: &[Check]) {
    for c in checks {
        assert!(c.pass, "{}: {}", c.name, c.detail);
    }
}

/// Random boxes in input pixels over a `h×w` map at `scale`, covering
/// interior, edge-straddling, fully outside and degenerate cases.
pub fn random_boxes(count: usize, h: usize, w: usize, scale: f64, rng: &mut SplitMix64) -> Vec<Box2> {
    let (ih, iw) = (h as f64 / scale, w as f64 / scale);
    (0..count)
        .map(|i| {
            let x0 = rng.uniform(-0.2 * iw, 1.1 * iw);
            let y0 = rng.uniform(-0.2 * ih, 1.1 * ih);
            let (bw, bh) = if i % 50 == 0 {
                (-rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0))
            } else {
                (rng.uniform(0.05, 0.7 * iw), rng.uniform(0.05, 0.7 * ih))
            };
            Box2::new(x0 as f32, y0 as f32, (x0 + bw) as f32, (y0 + bh) as f32)
        })
        .collect()
}

/// Largest deviation of `roi_align` in precision `T` from the brute-force
/// reference over `count` random boxes.
pub fn roi_align_max_deviation<T: Real>(count: usize, seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (m, d, h, w) = (2, 3, 12, 16);
    let scale = 0.25;
    let cfg = RoiAlignConfig {
        crop_height: 5,
        crop_width: 5,
        samples_per_bin: 2,
        spatial_scale: scale,
    };
    let features64 = random_tensor(&[m, d, h, w], -1.0, 1.0, &mut rng);
    let features: Tensor<T> = features64.cast();
    let exact: Tensor<f64> = features.cast();
    let boxes = random_boxes(count, h, w, scale, &mut rng);
    let slots: Vec<Option<Box2>> = boxes.iter().copied().map(Some).collect();
    let out = roi_align(&features, &slots, &cfg).unwrap();
    let per_map = count / m;
    let mut worst = 0.0f64;
    for (s, b) in boxes.iter().enumerate() {
        let map_index = s / per_map;
        for c in 0..d {
            let plane = &exact.data()[(map_index * d + c) * h * w..(map_index * d + c + 1) * h * w];
            let bx = [b.x_min as f64, b.y_min as f64, b.x_max as f64, b.y_max as f64];
            let reference = roi_align_reference(plane, h, w, bx, 5, 2, scale);
            let got = &out.data()[(s * d + c) * 25..(s * d + c + 1) * 25];
            for (g, r) in got.iter().zip(&reference) {
                worst = worst.max((g.to_f64().unwrap() - r).abs());
            }
        }
    }
    worst
}

pub fn sampler_checks(seeds: u64, draws: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut contained = true;
    let mut increasing = true;
    let mut repeatable = true;
    for (t, k) in [(15, 3), (16, 3), (30, 3), (60, 5), (7, 7), (9, 1)] {
        let plan = SegmentPlan::new(t, k).unwrap();
        let size = t / k;
        for seed in 0..seeds {
            let s = plan.sample(seed);
            for (i, &idx) in s.indices.iter().enumerate() {
                let end = if i + 1 == k { t } else { (i + 1) * size };
                contained &= idx >= i * size && idx < end;
            }
            increasing &= s.indices.windows(2).all(|p| p[0] < p[1]);
            repeatable &= plan.sample(seed) == s;
        }
    }
    checks.push(Check::new("sampler containment", contained, format!("{seeds} seeds per plan")));
    checks.push(Check::new("sampler monotonicity", increasing, format!("{seeds} seeds per plan")));
    checks.push(Check::new("sampler determinism", repeatable, format!("{seeds} seeds per plan")));

    for (t, k) in [(15, 3), (16, 3)] {
        let plan = SegmentPlan::new(t, k).unwrap();
        let mut counts: Vec<Vec<u64>> = plan.segments().iter().map(|r| vec![0; r.len()]).collect();
        for seed in 0..draws {
            for (i, &idx) in plan.sample(seed).indices.iter().enumerate() {
                counts[i][idx - plan.segments()[i].start] += 1;
            }
        }
        let p_values: Vec<f64> = counts
            .iter()
            .map(|c| chi_square_p_value(chi_square_uniform(c), c.len() - 1))
            .collect();
        let pass = p_values.iter().all(|&p| p > 0.01);
        checks.push(Check::new(
            format!("within-segment uniformity T={t} K={k}"),
            pass,
            format!("chi-square p-values {p_values:.3?} over {draws} draws"),
        ));
    }

    for t in [15, 30, 60] {
        let k = 3;
        let snippet = drifting_snippet(t, 16, 5);
        let counter = CountingEstimator::new(FlowParams {
            iterations: 5,
            ..FlowParams::default()
        });
        AttentionPipeline::new(k).attention_with(&snippet, &[], 3, &counter).unwrap();
        checks.push(Check::new(
            format!("flow calls T={t} K={k}"),
            counter.calls() == k - 1,
            format!("{} calls", counter.calls()),
        ));
    }
    checks
}

/// Mean endpoint error of `flow` against a uniform displacement over the
/// pixels at least `margin` from the border.
pub fn interior_endpoint_error(flow: &FlowField, dx: f32, dy: f32, margin: usize) -> f64 {
    let (h, w) = flow.dims();
    let mut total = 0.0;
    let mut n = 0.0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let eu = (flow.u.get(y, x) - dx) as f64;
            let ev = (flow.v.get(y, x) - dy) as f64;
            total += (eu * eu + ev * ev).sqrt();
            n += 1.0;
        }
    }
    total / n
}

pub fn flow_checks() -> Vec<Check> {
    let params = FlowParams::default();
    let mut checks = Vec::new();
    let a = textured_plane(64, 64, 0.0, 0.0);
    let still = estimate_flow(&a, &a, &params).unwrap();
    checks.push(Check::new(
        "identical frames give zero flow",
        still.max_abs() < 1e-6,
        format!("max |flow| = {:e}", still.max_abs()),
    ));
    for (dx, dy) in [(1.0, 0.0), (0.0, 1.0), (2.0, 2.0)] {
        let b = textured_plane(64, 64, dx, dy);
        let (flow, energy) = estimate_flow_traced(&a, &b, &params).unwrap();
        let err = interior_endpoint_error(&flow, dx, dy, 8);
        checks.push(Check::new(
            format!("translation ({dx}, {dy}) recovered"),
            err <= 0.5,
            format!("interior mean endpoint error {err:.4} px"),
        ));
        let rises = energy
            .windows(2)
            .filter(|p| p[1] > p[0] + 1e-12 * p[0].abs())
            .count();
        checks.push(Check::new(
            format!("energy non-increasing for ({dx}, {dy})"),
            rises == 0,
            format!("{rises} increases over {} sweeps", energy.len() - 1),
        ));
    }
    checks
}

fn random_flow(h: usize, w: usize, rng: &mut SplitMix64) -> FlowField {
    FlowField {
        u: Plane::new(h, w, (0..h * w).map(|_| rng.uniform(-3.0, 3.0) as f32).collect()).unwrap(),
        v: Plane::new(h, w, (0..h * w).map(|_| rng.uniform(-3.0, 3.0) as f32).collect()).unwrap(),
    }
}

pub fn attention_checks() -> Vec<Check> {
    let mut rng = SplitMix64::new(77);
    let (h, w) = (12, 10);
    let flows: Vec<FlowField> = (0..3).map(|_| random_flow(h, w, &mut rng)).collect();
    let w1: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let w2: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let (a, b) = (0.7f32, -1.3f32);
    let mixed: Vec<f32> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
    let at = |wv: &[f32]| weighted_attention(&flows, &WeightVector::new(wv.to_vec()).unwrap()).unwrap();
    let (m1, m2, mm) = (at(&w1), at(&w2), at(&mixed));
    let mut dev = 0.0f64;
    for i in 0..h * w {
        let expect = a as f64 * m1.values.data()[i] as f64 + b as f64 * m2.values.data()[i] as f64;
        let scale = 1.0f64.max(expect.abs());
        dev = dev.max((mm.values.data()[i] as f64 - expect).abs() / scale);
    }
    let mut checks = vec![Check::new(
        "attention linear in the weights",
        dev < 1e-6,
        format!("max relative deviation {dev:e}"),
    )];

    let frame = Tensor::from_fn(&[3, 16, 16], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0);
    let still: Vec<Tensor<f32>> = vec![frame.clone(); 15];
    let fused = AttentionPipeline::new(3).run(&still, &[], 4).unwrap();
    let nonzero = fused.frames.iter().flat_map(|f| f.data()).filter(|&&v| v != 0.0).count();
    checks.push(Check::new(
        "static snippet fuses to zero",
        nonzero == 0,
        format!("{nonzero} nonzero values"),
    ));

    let ones = AttentionMap {
        values: Plane::filled(16, 16, 1.0),
        source_indices: vec![],
        weights_used: vec![],
    };
    let moving = drifting_snippet(6, 16, 2);
    let identity = fuse(&moving, &ones).unwrap();
    let same = identity.frames.iter().zip(&moving).all(|(x, y)| x.data() == y.data());
    checks.push(Check::new("fusion with unit attention is the identity", same, ""));

    let boxes = [Box2::new(1.5, 2.0, 6.0, 9.5), Box2::new(4.0, 0.0, 10.0, 3.0)];
    let once = roi_restrict(&m1, &boxes);
    let twice = roi_restrict(&once, &boxes);
    checks.push(Check::new(
        "roi restriction is idempotent",
        once.values == twice.values,
        "",
    ));

    let unit: Vec<FlowField> = (0..2)
        .map(|_| FlowField {
            u: Plane::filled(8, 8, 1.0),
            v: Plane::filled(8, 8, 0.0),
        })
        .collect();
    let map = weighted_attention(&unit, &WeightVector::default_for(3)).unwrap();
    let spread = map
        .values
        .data()
        .iter()
        .map(|&v| (v as f64 - 0.066).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "default weights on unit flows give 0.066",
        spread < 1e-6,
        format!("max deviation from 0.066 is {spread:e}"),
    ));
    checks
}

/// `late_fuse` argmax against the argmax of the plain mean, over random
/// probability pairs.
pub fn late_fuse_agreement(cases: usize, seed: u64) -> usize {
    let mut rng = SplitMix64::new(seed);
    let mut agree = 0;
    for _ in 0..cases {
        let classes = 2 + rng.below(4) as usize;
        let batch = 1 + rng.below(3) as usize;
        let normalized = |rng: &mut SplitMix64| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.uniform(0.01, 1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect::<Vec<_>>()
        };
        let main: Vec<Vec<f64>> = (0..batch).map(|_| normalized(&mut rng)).collect();
        let pose: Vec<Vec<f64>> = (0..batch).map(|_| normalized(&mut rng)).collect();
        let main_t = Tensor::from_vec(&[batch, 1, classes], main.concat()).unwrap();
        let pose_t = Tensor::from_vec(&[batch, classes], pose.concat()).unwrap();
        let fused = late_fuse(&main_t, &pose_t).unwrap();
        let all = (0..batch).all(|b| {
            let mean: Vec<f64> = main[b].iter().zip(&pose[b]).map(|(x, y)| (x + y) / 2.0).collect();
            argmax(&fused.data()[b * classes..(b + 1) * classes]) == argmax(&mean)
        });
        agree += all as usize;
    }
    agree
}
