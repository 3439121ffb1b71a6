//! Adam against a hand-written reference on a fixed quadratic.

use swta::rng::SplitMix64;
use swta::tensor::{Adam, AdamConfig, LayerSpec, Sequential, StepDecay};

#[test]
fn ten_steps_match_the_reference_update() {
    let cfg = AdamConfig {
        learning_rate: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        weight_decay: 0.01,
    };
    let mut rng = SplitMix64::new(2);
    let mut net: Sequential<f64> = Sequential::new(
        [LayerSpec::Dense {
            in_features: 3,
            out_features: 2,
        }],
        &mut rng,
    )
    .unwrap();
    let mut adam = Adam::new(cfg).unwrap();

    let mut reference: Vec<Vec<f64>> = net.params_mut().map(|p| p.value.data().to_vec()).collect();
    let mut m: Vec<Vec<f64>> = reference.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut v = m.clone();
    // Gradient of 0.5 * sum(c_i * x_i^2) is c_i * x_i.
    let curvature = |i: usize| 1.0 + (i % 3) as f64;
    for step in 1..=10 {
        for p in net.params_mut() {
            let values = p.value.data().to_vec();
            for (i, g) in p.grad.data_mut().iter_mut().enumerate() {
                *g = curvature(i) * values[i];
            }
        }
        adam.step(net.params_mut()).unwrap();

        for (k, x) in reference.iter_mut().enumerate() {
            for i in 0..x.len() {
                let g = curvature(i) * x[i] + cfg.weight_decay * x[i];
                m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * g;
                v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * g * g;
                let mh = m[k][i] / (1.0 - cfg.beta1.powi(step));
                let vh = v[k][i] / (1.0 - cfg.beta2.powi(step));
                x[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
        for (p, x) in net.params_mut().zip(&reference) {
            for (a, b) in p.value.data().iter().zip(x) {
                assert!((a - b).abs() < 1e-12, "step {step}: {a} vs {b}");
            }
        }
    }
    assert_eq!(adam.step_count(), 10);
}

#[test]
fn step_decay_divides_by_ten_every_forty_epochs() {
    let s = StepDecay::new(40, 0.1);
    for (epoch, factor) in [(0, 1.0), (39, 1.0), (40, 0.1), (79, 0.1), (80, 0.01)] {
        let lr = s.at_epoch(epoch).learning_rate(1e-5);
        assert!((lr - 1e-5 * factor).abs() < 1e-20, "epoch {epoch}: {lr}");
    }
}
