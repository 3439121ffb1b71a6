//! Finite-difference checks for every layer kind and for the composed
//! graphs built from them.

use swta::media::Box2;
use swta::model::{
    roi_align, roi_align_backward, snippet_loss, temporal_maxpool, BackboneConfig, HeadConfig, ModelConfig, PoseConfig,
    PoseStream, RoiAlignConfig, SnippetBatch, SwtaNet,
};
use swta::rng::SplitMix64;
use swta::tensor::{bce_with_logits, LayerSpec, Mode, Sequential, Tensor};

use super::*;

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const GRAPH_TOLERANCE: f64 = 1e-3;

pub struct GradCase {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passes(&self) -> bool {
        self.error < self.tolerance
    }
}

fn layer_case(name: &str, spec: LayerSpec, input: Tensor<f64>, seed: u64) -> GradCase {
    let (part, error) = worst(&layer_gradient_errors(spec, input, seed));
    GradCase {
        name: format!("{name} ({part})"),
        error,
        tolerance: LAYER_TOLERANCE,
    }
}

pub fn layer_cases() -> Vec<GradCase> {
    let mut rng = SplitMix64::new(11);
    let mut cases = vec![
        layer_case(
            "conv2d stride 1",
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
            random_tensor(&[2, 3, 6, 6], -1.0, 1.0, &mut rng),
            1,
        ),
        layer_case(
            "conv2d stride 2 odd side",
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
            random_tensor(&[2, 2, 7, 9], -1.0, 1.0, &mut rng),
            2,
        ),
        layer_case(
            "conv1d",
            LayerSpec::Conv1d {
                in_channels: 4,
                out_channels: 5,
                kernel: 3,
            },
            random_tensor(&[2, 4, 7], -1.0, 1.0, &mut rng),
            3,
        ),
        layer_case(
            "dense",
            LayerSpec::Dense {
                in_features: 5,
                out_features: 3,
            },
            random_tensor(&[2, 4, 5], -1.0, 1.0, &mut rng),
            4,
        ),
        layer_case(
            "batch norm rows",
            LayerSpec::BatchNorm { features: 3 },
            random_tensor(&[5, 3], -2.0, 2.0, &mut rng),
            5,
        ),
        layer_case(
            "batch norm maps",
            LayerSpec::BatchNorm { features: 3 },
            random_tensor(&[2, 3, 4, 4], -2.0, 2.0, &mut rng),
            6,
        ),
        layer_case(
            "dropout",
            LayerSpec::Dropout { ratio: 0.3 },
            random_tensor(&[3, 8], -1.0, 1.0, &mut rng),
            7,
        ),
        layer_case("relu", LayerSpec::Relu, kink_free_tensor(&[3, 8], 1e-2, &mut rng), 8),
        layer_case("sigmoid", LayerSpec::Sigmoid, random_tensor(&[3, 8], -3.0, 3.0, &mut rng), 9),
        layer_case("softmax", LayerSpec::Softmax, random_tensor(&[2, 3, 5], -2.0, 2.0, &mut rng), 10),
        layer_case(
            "max pool over time",
            LayerSpec::MaxPoolTime,
            random_tensor(&[2, 5, 3], -1.0, 1.0, &mut rng),
            11,
        ),
        layer_case(
            "lstm",
            LayerSpec::Lstm {
                input_size: 3,
                hidden_size: 5,
            },
            random_tensor(&[2, 4, 3], -1.0, 1.0, &mut rng),
            12,
        ),
    ];

    let logits = random_tensor(&[3, 4], -3.0, 3.0, &mut rng);
    let targets = Tensor::from_fn(&[3, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let (_, analytic) = bce_with_logits(&logits, &targets).unwrap();
    let mut z = logits.clone();
    let numeric = numeric_gradient(z.len(), |i, d| {
        let orig = z.data()[i];
        z.data_mut()[i] = orig + d;
        let (l, _) = bce_with_logits(&z, &targets).unwrap();
        z.data_mut()[i] = orig;
        l
    });
    cases.push(GradCase {
        name: "binary cross-entropy".into(),
        error: relative_error(&numeric, analytic.data()),
        tolerance: LAYER_TOLERANCE,
    });

    cases.push(roi_align_case(&mut rng));
    cases.push(temporal_maxpool_case(&mut rng));
    cases
}

fn roi_align_case(rng: &mut SplitMix64) -> GradCase {
    let cfg = RoiAlignConfig {
        crop_height: 5,
        crop_width: 5,
        samples_per_bin: 2,
        spatial_scale: 0.5,
    };
    let features = random_tensor(&[2, 3, 8, 8], -1.0, 1.0, rng);
    let boxes = vec![
        Some(Box2::new(1.3, 2.1, 11.7, 9.4)),
        None,
        Some(Box2::new(-3.0, 4.0, 9.0, 20.0)),
        Some(Box2::new(0.0, 0.0, 16.0, 16.0)),
    ];
    let out = roi_align(&features, &boxes, &cfg).unwrap();
    let probe = random_tensor(out.shape(), -1.0, 1.0, rng);
    let analytic = roi_align_backward(&probe, features.shape(), &boxes, &cfg).unwrap();
    let mut f = features.clone();
    let numeric = numeric_gradient(f.len(), |i, d| {
        let orig = f.data()[i];
        f.data_mut()[i] = orig + d;
        let y = roi_align(&f, &boxes, &cfg).unwrap();
        f.data_mut()[i] = orig;
        dot(y.data(), probe.data())
    });
    GradCase {
        name: "roi align features".into(),
        error: relative_error(&numeric, analytic.data()),
        tolerance: LAYER_TOLERANCE,
    }
}

fn temporal_maxpool_case(rng: &mut SplitMix64) -> GradCase {
    let logits = random_tensor(&[2, 4, 2, 3], -1.0, 1.0, rng);
    let presence: Vec<bool> = (0..16).map(|i| i % 5 != 2).collect();
    let pooled = temporal_maxpool(&logits, &presence).unwrap();
    let probe = random_tensor(pooled.values.shape(), -1.0, 1.0, rng);
    let analytic = pooled.backward(&probe).unwrap();
    let mut z = logits.clone();
    let numeric = numeric_gradient(z.len(), |i, d| {
        let orig = z.data()[i];
        z.data_mut()[i] = orig + d;
        let y = temporal_maxpool(&z, &presence).unwrap();
        z.data_mut()[i] = orig;
        dot(y.values.data(), probe.data())
    });
    GradCase {
        name: "temporal max pool".into(),
        error: relative_error(&numeric, analytic.data()),
        tolerance: LAYER_TOLERANCE,
    }
}

/// Input and parameter errors of a layer stack under a linear probe.
fn sequential_case(name: &str, specs: Vec<LayerSpec>, input: Tensor<f64>, tolerance: f64, seed: u64) -> GradCase {
    let mut init = SplitMix64::new(seed);
    let mut net: Sequential<f64> = Sequential::new(specs, &mut init).unwrap();
    let out = net.forward(&input, Mode::Train, seed).unwrap();
    let probe = random_tensor(out.shape(), -1.0, 1.0, &mut init);
    net.zero_grad();
    let dx = net.backward(&probe).unwrap();

    let mut x = input.clone();
    let numeric_x = numeric_gradient(x.len(), |i, d| {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + d;
        let y = net.forward(&x, Mode::Train, seed).unwrap();
        x.data_mut()[i] = orig;
        dot(y.data(), probe.data())
    });
    let mut errors = vec![("input".to_string(), relative_error(&numeric_x, dx.data()))];
    errors.extend(param_gradient_errors(
        &mut net,
        |n| n.params_mut().collect(),
        |n| dot(n.forward(&input, Mode::Train, seed).unwrap().data(), probe.data()),
    ));
    let (part, error) = worst(&errors);
    GradCase {
        name: format!("{name} ({part})"),
        error,
        tolerance,
    }
}

fn tiny_pose_config() -> PoseConfig {
    PoseConfig {
        enabled: true,
        frames: 6,
        joints: 18,
        conv_channels: [4, 5],
        kernel: 3,
        dropout: 0.5,
        lstm_units: 3,
        num_classes: 2,
    }
}

/// Tiny end-to-end model: 16×16 frames, one stride-2 block giving 8×8
/// feature maps, two classes.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        num_classes: 2,
        input_height: 16,
        input_width: 16,
        backbone: BackboneConfig::uniform(3, &[4], 3, 2),
        head: HeadConfig {
            fc_units: 6,
            dropout: 0.3,
        },
        ..ModelConfig::default()
    }
}

pub fn tiny_batch(rng: &mut SplitMix64) -> SnippetBatch<f64> {
    let (b, t, n) = (1, 2, 2);
    let boxes = vec![
        Some(Box2::new(1.0, 2.0, 9.0, 12.0)),
        Some(Box2::new(6.5, 0.5, 15.0, 7.5)),
        Some(Box2::new(2.0, 3.0, 10.0, 13.0)),
        None,
    ];
    let targets = Tensor::from_fn(&[b, t, n, 2], |i| {
        let slot = i / 2;
        let class = i % 2;
        let label = if slot % 2 == 0 { 0 } else { 1 };
        if boxes[slot].is_some() && class == label {
            1.0
        } else {
            0.0
        }
    });
    SnippetBatch {
        frames: random_tensor(&[b * t, 3, 16, 16], -1.0, 1.0, rng),
        batch: b,
        time: t,
        actors: n,
        boxes,
        targets,
    }
}

pub fn composed_cases() -> Vec<GradCase> {
    let mut rng = SplitMix64::new(23);
    let mut cases = vec![
        sequential_case(
            "backbone stack",
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::BatchNorm { features: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::BatchNorm { features: 4 },
                LayerSpec::Relu,
            ],
            random_tensor(&[2, 2, 8, 8], -1.0, 1.0, &mut rng),
            GRAPH_TOLERANCE,
            31,
        ),
        sequential_case(
            "classifier head",
            vec![
                LayerSpec::Dense {
                    in_features: 10,
                    out_features: 6,
                },
                LayerSpec::Dropout { ratio: 0.3 },
                LayerSpec::BatchNorm { features: 6 },
                LayerSpec::Dense {
                    in_features: 6,
                    out_features: 3,
                },
            ],
            random_tensor(&[5, 10], -1.0, 1.0, &mut rng),
            GRAPH_TOLERANCE,
            32,
        ),
    ];

    let mut pose: PoseStream<f64> = PoseStream::new(tiny_pose_config(), 33).unwrap();
    let keypoints = random_tensor(&[3, 6, 18, 2], 0.0, 1.0, &mut rng);
    let logits = pose.forward(&keypoints, Mode::Train, 5).unwrap();
    let probe = random_tensor(logits.shape(), -1.0, 1.0, &mut rng);
    pose.zero_grad();
    let dk = pose.backward(&probe).unwrap();
    let mut k = keypoints.clone();
    let numeric_k = numeric_gradient(k.len(), |i, d| {
        let orig = k.data()[i];
        k.data_mut()[i] = orig + d;
        let y = pose.forward(&k, Mode::Train, 5).unwrap();
        k.data_mut()[i] = orig;
        dot(y.data(), probe.data())
    });
    let mut errors = vec![("keypoints".to_string(), relative_error(&numeric_k, dk.data()))];
    errors.extend(param_gradient_errors(
        &mut pose,
        |p| p.params_mut().collect(),
        |p| dot(p.forward(&keypoints, Mode::Train, 5).unwrap().data(), probe.data()),
    ));
    let (part, error) = worst(&errors);
    cases.push(GradCase {
        name: format!("pose stream ({part})"),
        error,
        tolerance: GRAPH_TOLERANCE,
    });

    let mut net: SwtaNet<f64> = SwtaNet::new(tiny_model_config(), 41).unwrap();
    let batch = tiny_batch(&mut rng);
    let out = net.forward(&batch, Mode::Train, 9).unwrap();
    let loss = snippet_loss(&out, &batch, 0.5).unwrap();
    net.zero_grad();
    net.backward(&out, &loss.d_frame, &loss.d_pooled).unwrap();
    let errors = param_gradient_errors(
        &mut net,
        |n| n.params_mut().collect(),
        |n| {
            let out = n.forward(&batch, Mode::Train, 9).unwrap();
            snippet_loss(&out, &batch, 0.5).unwrap().total
        },
    );
    let (part, error) = worst(&errors);
    cases.push(GradCase {
        name: format!("end-to-end network and loss ({part})"),
        error,
        tolerance: GRAPH_TOLERANCE,
    });
    cases
}
