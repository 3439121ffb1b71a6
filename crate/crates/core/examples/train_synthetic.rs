//! Generate a small motion dataset, train on fused snippets and report
//! test accuracy.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs=30] [lr=1e-5] [raw]
//! ```

use std::time::Instant;

use swta::harness::{evaluate, generate_synthetic_dataset, train, Split, SyntheticDatasetSpec, TrainConfig};
use swta::model::{BackboneConfig, ModelConfig};

fn main() -> swta::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let value = |key: &str| {
        args.iter()
            .find_map(|a| a.strip_prefix(key)?.strip_prefix('='))
            .map(str::to_string)
    };
    let epochs: usize = value("epochs").and_then(|v| v.parse().ok()).unwrap_or(30);
    let base_lr: f64 = value("lr").and_then(|v| v.parse().ok()).unwrap_or(1e-5);
    let fusion = !args.iter().any(|a| a == "raw");

    let dir = tempfile::tempdir().expect("temp dir");
    let data = dir.path().join("data");
    let manifest = generate_synthetic_dataset(&data, &SyntheticDatasetSpec::default())?;

    let cfg = TrainConfig {
        epochs,
        base_lr,
        lr_decay_period: (epochs / 2).max(1),
        seed: 1,
        fusion,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        num_classes: manifest.classes.len(),
        input_height: 64,
        input_width: 64,
        backbone: BackboneConfig::uniform(3, &[16, 32], 3, 2),
        ..ModelConfig::default()
    };
    let started = Instant::now();
    let run = dir.path().join("run");
    let outcome = train(&cfg, &model, &data, &manifest, &run)?;
    let losses = outcome.losses();
    let per_epoch = losses.len() / epochs;
    for (e, chunk) in losses.chunks(per_epoch).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("epoch {:>3}  loss {mean:.4}", e + 1);
    }
    let report = evaluate(&run, &data, &manifest, Split::Test)?;
    println!(
        "{} frames: test top-1 {:.3} ({}/{}) in {:.1}s",
        if fusion { "fused" } else { "raw" },
        report.top1,
        report.correct,
        report.total,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
