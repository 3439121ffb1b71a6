//! Render a two-actor synthetic clip to PNG frames with its annotations.
//!
//! ```text
//! cargo run --example synthetic_scene -- <out_dir>
//! ```

use std::path::PathBuf;

use swta::media::{generate_synthetic_scene, save_clip, MotionClass, SceneSpec, SpriteSpec};

fn main() -> swta::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "synthetic_scene".into());
    let spec = SceneSpec {
        sprites: vec![
            SpriteSpec {
                motion: MotionClass::MoveRight,
                speed: 2.0,
                size: 10,
            },
            SpriteSpec {
                motion: MotionClass::Oscillate,
                speed: 1.5,
                size: 8,
            },
        ],
        keypoints: true,
        ..SceneSpec::default()
    };
    let (clip, ann) = generate_synthetic_scene(&spec, 42)?;
    for t in [0, clip.len() - 1] {
        for n in 0..ann.num_actors() {
            println!("frame {t} actor {n}: {:?} label {:?}", ann.box_at(t, n), ann.label_at(t, n));
        }
    }
    save_clip(&out, &clip, &ann)?;
    println!("wrote {} frames to {}", clip.len(), out.display());
    Ok(())
}
