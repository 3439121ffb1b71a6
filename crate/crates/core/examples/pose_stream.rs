//! Train the keypoint-sequence classifier on two synthetic motion classes
//! and fuse its probabilities with a stand-in appearance prediction.

use swta::harness::{
    generate_synthetic_dataset, pose_sample, stack_keypoints, train_pose, ClipHandle, PoseTraining, Split,
    SyntheticDatasetSpec,
};
use swta::model::{late_fuse, PoseConfig};
use swta::tensor::{Mode, Tensor};

fn main() -> swta::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticDatasetSpec {
        classes: 2,
        clips: 40,
        frames: 30,
        speed: 1.0,
        keypoints: true,
        ..SyntheticDatasetSpec::default()
    };
    let manifest = generate_synthetic_dataset(dir.path(), &spec)?;
    let config = PoseConfig {
        enabled: true,
        num_classes: 2,
        ..PoseConfig::default()
    };
    let load = |split: Split| -> swta::Result<Vec<(Tensor<f32>, usize)>> {
        let mut out = Vec::new();
        for entry in manifest.split(split) {
            out.extend(pose_sample(&ClipHandle::open(dir.path(), entry)?, config.frames));
        }
        Ok(out)
    };
    let (train_set, test_set) = (load(Split::Train)?, load(Split::Test)?);
    let training = PoseTraining {
        epochs: 30,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 1,
    };
    let (mut net, losses) = train_pose(&config, &train_set, &training)?;
    println!(
        "loss {:.4} -> {:.4} over {} steps",
        losses[0],
        losses[losses.len() - 1],
        losses.len()
    );

    let kp = stack_keypoints(&test_set.iter().map(|(k, _)| k).collect::<Vec<_>>())?;
    let pose = net.probabilities(&kp, Mode::Eval, 0)?;
    let appearance = Tensor::full(&[test_set.len(), 1, 2], 0.5);
    let fused = late_fuse(&appearance, &pose)?;
    let correct = test_set
        .iter()
        .enumerate()
        .filter(|(i, (_, label))| {
            let row = &fused.data()[i * 2..i * 2 + 2];
            (row[1] > row[0]) as usize == *label
        })
        .count();
    println!("late-fused test accuracy {correct}/{}", test_set.len());
    Ok(())
}
