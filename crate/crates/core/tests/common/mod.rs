//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the code it is used to check.

#![allow(dead_code)]

pub mod fixtures;
pub mod gradients;
pub mod suites;

use swta::plane::Plane;
use swta::rng::SplitMix64;
use swta::tensor::{Layer, LayerSpec, Mode, Param, Tensor};

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Values in `±[margin, 1]`, keeping ReLU and max-pool inputs away from
/// their kinks.
pub fn kink_free_tensor(shape: &[usize], margin: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(margin, 1.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Central differences of a scalar function of `n` inputs, where
/// `eval(i, delta)` returns the function with input `i` shifted by `delta`
/// (and must restore the input afterwards).
pub fn numeric_gradient(n: usize, mut eval: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..n)
        .map(|i| (eval(i, FD_STEP) - eval(i, -FD_STEP)) / (2.0 * FD_STEP))
        .collect()
}

/// Gradient norms below this count as zero, so that a gradient that is
/// exactly zero in theory (a bias feeding batch norm) compares round-off
/// against round-off on an absolute scale.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(NORM_FLOOR)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative errors of the analytic input and parameter gradients of one
/// layer under the linear probe `L = Σ probe · layer(x)`, labelled
/// `"input"` and by parameter name.
pub fn layer_gradient_errors(spec: LayerSpec, input: Tensor<f64>, seed: u64) -> Vec<(String, f64)> {
    let mut init = SplitMix64::new(seed);
    let mut layer: Layer<f64> = Layer::new(spec, &mut init).unwrap();
    let dropout_seed = seed ^ 0x5eed;
    let out = layer.forward(&input, Mode::Train, dropout_seed).unwrap();
    let probe = random_tensor(out.shape(), -1.0, 1.0, &mut init);
    layer.zero_grad();
    let dx = layer.backward(&probe).unwrap();

    let mut x = input.clone();
    let mut results = Vec::new();
    let numeric_x = numeric_gradient(x.len(), |i, d| {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + d;
        let y = layer.forward(&x, Mode::Train, dropout_seed).unwrap();
        x.data_mut()[i] = orig;
        dot(y.data(), probe.data())
    });
    results.push(("input".to_string(), relative_error(&numeric_x, dx.data())));

    let analytic: Vec<(usize, String, Vec<f64>)> = layer
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(k, p)| (k, p.name.clone(), p.grad.data().to_vec()))
        .collect();
    for (k, name, grad) in analytic {
        let numeric = numeric_gradient(grad.len(), |i, d| {
            let orig = layer.params()[k].value.data()[i];
            layer.params_mut()[k].value.data_mut()[i] = orig + d;
            let y = layer.forward(&input, Mode::Train, dropout_seed).unwrap();
            layer.params_mut()[k].value.data_mut()[i] = orig;
            dot(y.data(), probe.data())
        });
        results.push((name, relative_error(&numeric, &grad)));
    }
    results
}

/// Accessor for every parameter of a model, in a stable order.
pub type ParamList<M> = fn(&mut M) -> Vec<&mut Param<f64>>;

fn update_trainable<M>(model: &mut M, params: ParamList<M>, k: usize, i: usize, f: impl FnOnce(f64) -> f64) -> f64 {
    let mut all = params(model);
    let p = all.iter_mut().filter(|p| p.trainable).nth(k).expect("parameter index");
    let old = p.value.data()[i];
    p.value.data_mut()[i] = f(old);
    old
}

/// Relative errors of the gradients already accumulated in the model's
/// trainable parameters against central differences of `loss`, labelled
/// `"<position>:<name>"`.
pub fn param_gradient_errors<M>(model: &mut M, params: ParamList<M>, mut loss: impl FnMut(&mut M) -> f64) -> Vec<(String, f64)> {
    let analytic: Vec<(String, Vec<f64>)> = params(model)
        .into_iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    analytic
        .into_iter()
        .enumerate()
        .map(|(k, (name, grad))| {
            let numeric = numeric_gradient(grad.len(), |i, d| {
                let old = update_trainable(model, params, k, i, |v| v + d);
                let value = loss(model);
                update_trainable(model, params, k, i, |_| old);
                value
            });
            (format!("{k}:{name}"), relative_error(&numeric, &grad))
        })
        .collect()
}

pub fn worst(errors: &[(String, f64)]) -> (String, f64) {
    errors
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, e| if e.1 > acc.1 { e } else { acc })
}

/// Bilinear read at continuous `(y, x)` on an `h×w` map following the
/// aligned ROIAlign convention: zero beyond one cell outside the map,
/// coordinates clamped at 0, edge replication at the far side.
pub fn bilinear_reference(map: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return 0.0;
    }
    let y = y.max(0.0);
    let x = x.max(0.0);
    let (y_lo, y_hi, y) = if y as usize >= h - 1 {
        (h - 1, h - 1, (h - 1) as f64)
    } else {
        (y as usize, y as usize + 1, y)
    };
    let (x_lo, x_hi, x) = if x as usize >= w - 1 {
        (w - 1, w - 1, (w - 1) as f64)
    } else {
        (x as usize, x as usize + 1, x)
    };
    let fy = y - y_lo as f64;
    let fx = x - x_lo as f64;
    let at = |r: usize, c: usize| map[r * w + c];
    at(y_lo, x_lo) * (1.0 - fy) * (1.0 - fx)
        + at(y_lo, x_hi) * (1.0 - fy) * fx
        + at(y_hi, x_lo) * fy * (1.0 - fx)
        + at(y_hi, x_hi) * fy * fx
}

/// Brute-force ROIAlign of one channel under one box given in input pixels.
pub fn roi_align_reference(
    map: &[f64],
    h: usize,
    w: usize,
    bx: [f64; 4],
    crop: usize,
    samples: usize,
    scale: f64,
) -> Vec<f64> {
    let (max_y, max_x) = (h as f64 / scale, w as f64 / scale);
    let x0 = bx[0].clamp(0.0, max_x);
    let y0 = bx[1].clamp(0.0, max_y);
    let x1 = bx[2].clamp(0.0, max_x);
    let y1 = bx[3].clamp(0.0, max_y);
    let mut out = vec![0.0; crop * crop];
    if x1 <= x0 || y1 <= y0 {
        return out;
    }
    let bin_h = (y1 - y0) * scale / crop as f64;
    let bin_w = (x1 - x0) * scale / crop as f64;
    for i in 0..crop {
        for j in 0..crop {
            let mut acc = 0.0;
            for a in 0..samples {
                for b in 0..samples {
                    let y = y0 * scale - 0.5 + (i as f64 + (a as f64 + 0.5) / samples as f64) * bin_h;
                    let x = x0 * scale - 0.5 + (j as f64 + (b as f64 + 0.5) / samples as f64) * bin_w;
                    acc += bilinear_reference(map, h, w, y, x);
                }
            }
            out[i * crop + j] = acc / (samples * samples) as f64;
        }
    }
    out
}

/// Smooth multi-frequency texture on the `[0, 255]` scale, shifted by
/// `(dx, dy)` so that frame `b(x) = a(x − d)`.
pub fn textured_plane(h: usize, w: usize, dx: f32, dy: f32) -> Plane {
    Plane::from_fn(h, w, |y, x| {
        let (y, x) = (y as f32 - dy, x as f32 - dx);
        128.0
            + 50.0 * (x * 0.3).sin() * (y * 0.25).cos()
            + 30.0 * ((x + y) * 0.17).sin()
            + 20.0 * (x * 0.11 - y * 0.23).cos()
    })
}

/// Pearson chi-square statistic against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).unwrap().sf(statistic)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
