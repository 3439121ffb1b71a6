//! Build the weighted attention map of a synthetic clip and fuse it with
//! the frames, with and without restricting it to the actor box.

use swta::attention::AttentionPipeline;
use swta::media::{generate_synthetic_scene, MotionClass, SceneSpec, SpriteSpec};

fn main() -> swta::Result<()> {
    let spec = SceneSpec {
        sprites: vec![SpriteSpec {
            motion: MotionClass::MoveRight,
            speed: 2.0,
            size: 12,
        }],
        ..SceneSpec::default()
    };
    let (clip, ann) = generate_synthetic_scene(&spec, 3)?;
    let pipeline = AttentionPipeline::new(3);
    let extents: Vec<_> = ann.actor_extents().into_iter().flatten().collect();

    for (label, boxes) in [("full frame", Vec::new()), ("actor box", extents)] {
        let fused = pipeline.run(&clip.frames, &boxes, 7)?;
        let map = fused.attention.values.data();
        let active = map.iter().filter(|&&v| v > 0.0).count();
        let peak = map.iter().copied().fold(0.0f32, f32::max);
        println!(
            "{label}: sampled frames {:?}, {active}/{} nonzero cells, peak {peak:.3}",
            fused.attention.source_indices,
            map.len()
        );
    }
    Ok(())
}
