//! Small on-disk datasets and configs for training tests.

use std::path::Path;

use swta::harness::{generate_synthetic_dataset, DatasetManifest, SyntheticDatasetSpec, TrainConfig};
use swta::model::{BackboneConfig, HeadConfig, ModelConfig};

/// Five 16×16 clips of six frames, two classes.
pub fn tiny_dataset(root: &Path, actors: usize) -> DatasetManifest {
    generate_synthetic_dataset(
        root,
        &SyntheticDatasetSpec {
            classes: 2,
            clips: 5,
            frames: 6,
            size: 16,
            actors,
            sprite_size: 4,
            speed: 1.0,
            keypoints: false,
            seed: 3,
        },
    )
    .unwrap()
}

pub fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        snippet_length: 6,
        seed: 5,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

pub fn tiny_model(classes: usize) -> ModelConfig {
    ModelConfig {
        num_classes: classes,
        input_height: 16,
        input_width: 16,
        backbone: BackboneConfig::uniform(3, &[4], 3, 2),
        head: HeadConfig {
            fc_units: 8,
            dropout: 0.3,
        },
        ..ModelConfig::default()
    }
}

/// Per clip, per frame: the labels of the actors present, in slot order.
pub const HANDMADE_LABELS: [(&str, &[&[usize]]); 2] = [
    ("clip_a", &[&[0, 1], &[1], &[2, 0]]),
    ("clip_b", &[&[2], &[], &[1, 1]]),
];

/// Two three-frame 8×8 clips with 0 to 2 actors per frame, all in the test
/// split.
pub fn handmade_dataset(root: &Path) -> DatasetManifest {
    use swta::harness::Split;
    use swta::media::save_frames;
    use swta::tensor::Tensor;

    for (id, frames) in HANDMADE_LABELS {
        let dir = root.join(id);
        let images: Vec<Tensor<f32>> = (0..frames.len())
            .map(|t| Tensor::full(&[3, 8, 8], 40.0 * t as f32))
            .collect();
        save_frames(&dir.join("frames"), &images).unwrap();
        let frames_json: Vec<serde_json::Value> = frames
            .iter()
            .map(|labels| {
                let boxes: Vec<[f32; 4]> = (0..labels.len()).map(|n| [n as f32, 0.0, n as f32 + 4.0, 4.0]).collect();
                serde_json::json!({ "boxes": boxes, "labels": labels })
            })
            .collect();
        let ann = serde_json::json!({ "fps": 30.0, "classes": ["a", "b", "c"], "frames": frames_json });
        std::fs::write(dir.join("annotations.json"), ann.to_string()).unwrap();
    }
    let mut manifest = DatasetManifest::scan(root, 0).unwrap();
    for c in &mut manifest.clips {
        c.split = Split::Test;
    }
    manifest.save(root).unwrap();
    manifest
}
