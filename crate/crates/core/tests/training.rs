mod common;

use common::fixtures::{tiny_dataset, tiny_model, tiny_train_config};
use common::random_tensor;
use swta::harness::{
    evaluate_model, train, LogRecord, Split, TrainConfig, TrainedModel, FINAL_CHECKPOINT, TRAIN_LOG,
};
use swta::media::Box2;
use swta::model::{snippet_loss, SnippetBatch, SwtaNet};
use swta::rng::SplitMix64;
use swta::tensor::{Adam, AdamConfig, Mode, Tensor};

fn trainable_values(net: &mut SwtaNet<f32>) -> Vec<Vec<f32>> {
    net.params_mut()
        .filter(|p| p.trainable)
        .map(|p| p.value.data().to_vec())
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = tiny_dataset(&data, 1);
    let cfg = TrainConfig {
        base_lr: 0.0,
        ..tiny_train_config(2)
    };
    let model = tiny_model(2);
    let run = dir.path().join("run");
    train(&cfg, &model, &data, &manifest, &run).unwrap();
    let mut trained = TrainedModel::load(&run, None).unwrap();
    let mut init: SwtaNet<f32> = SwtaNet::new(model, cfg.seed).unwrap();
    assert_eq!(trainable_values(&mut trained.net), trainable_values(&mut init));
}

#[test]
fn same_seed_reproduces_the_loss_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = tiny_dataset(&data, 2);
    let cfg = TrainConfig {
        base_lr: 1e-3,
        ..tiny_train_config(3)
    };
    let a = train(&cfg, &tiny_model(2), &data, &manifest, &dir.path().join("a")).unwrap();
    let b = train(&cfg, &tiny_model(2), &data, &manifest, &dir.path().join("b")).unwrap();
    let (la, lb) = (a.losses(), b.losses());
    assert_eq!(la.len(), lb.len());
    for (x, y) in la.iter().zip(&lb) {
        assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-12), "{x} vs {y}");
    }
    let other = TrainConfig { seed: 6, ..cfg };
    let c = train(&other, &tiny_model(2), &data, &manifest, &dir.path().join("c")).unwrap();
    assert_ne!(la, c.losses());
}

#[test]
fn log_and_checkpoints_follow_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = tiny_dataset(&data, 1);
    let cfg = TrainConfig {
        checkpoint_every: 10,
        ..tiny_train_config(41)
    };
    let run = dir.path().join("run");
    let outcome = train(&cfg, &tiny_model(2), &data, &manifest, &run).unwrap();

    let text = std::fs::read_to_string(run.join(TRAIN_LOG)).unwrap();
    let records: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records, outcome.log);
    assert!(records.windows(2).all(|w| w[1].step == w[0].step + 1));
    let lr_at = |epoch: usize| records.iter().find(|r| r.epoch == epoch).unwrap().lr;
    assert_eq!(lr_at(39), cfg.base_lr);
    assert!((lr_at(40) - cfg.base_lr / 10.0).abs() < 1e-18);
    for e in [10, 20, 30, 40] {
        assert!(run.join(format!("epoch_{e:03}.swta")).exists());
    }
    assert!(run.join(FINAL_CHECKPOINT).exists());
}

#[test]
fn memorizes_sixteen_samples() {
    let mut rng = SplitMix64::new(12);
    let classes = 2;
    let model = swta::model::ModelConfig {
        head: swta::model::HeadConfig {
            fc_units: 16,
            dropout: 0.0,
        },
        ..tiny_model(classes)
    };
    let mut net: SwtaNet<f32> = SwtaNet::new(model, 1).unwrap();
    let labels: Vec<usize> = (0..16).map(|_| rng.below(2) as usize).collect();
    let batch = SnippetBatch {
        frames: random_tensor(&[16, 3, 16, 16], -1.0, 1.0, &mut rng).cast(),
        batch: 16,
        time: 1,
        actors: 1,
        boxes: vec![Some(Box2::new(2.0, 2.0, 14.0, 14.0)); 16],
        targets: Tensor::from_fn(&[16, 1, 1, classes], |i| (labels[i / classes] == i % classes) as u8 as f32),
    };
    let mut adam = Adam::new(AdamConfig {
        learning_rate: 1e-2,
        ..AdamConfig::default()
    })
    .unwrap();
    let mut last = f32::INFINITY;
    for step in 0..200 {
        net.zero_grad();
        let out = net.forward(&batch, Mode::Train, step).unwrap();
        let loss = snippet_loss(&out, &batch, 0.5).unwrap();
        net.backward(&out, &loss.d_frame, &loss.d_pooled).unwrap();
        adam.step(net.params_mut()).unwrap();
        last = loss.total;
        if last < 0.1 {
            break;
        }
    }
    assert!(last < 0.1, "loss after 200 steps: {last}");
}

#[test]
fn checkpoint_round_trip_gives_identical_logits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = tiny_dataset(&data, 2);
    let cfg = TrainConfig {
        base_lr: 1e-3,
        ..tiny_train_config(2)
    };
    let run = dir.path().join("run");
    train(&cfg, &tiny_model(2), &data, &manifest, &run).unwrap();

    let mut trained = TrainedModel::load(&run, None).unwrap();
    let (_, before) = evaluate_model(&mut trained, &data, &manifest, Split::Test).unwrap();
    let copy = dir.path().join("copy.swta");
    trained.net.save(&copy).unwrap();
    let mut reloaded = TrainedModel::load(&run, Some(&copy)).unwrap();
    let (_, after) = evaluate_model(&mut reloaded, &data, &manifest, Split::Test).unwrap();
    for (x, y) in before.iter().zip(&after) {
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.pooled_logits), bits(&y.pooled_logits));
    }
}

#[test]
fn training_rejects_class_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = tiny_dataset(&data, 1);
    let err = train(&tiny_train_config(1), &tiny_model(3), &data, &manifest, &dir.path().join("run"));
    assert!(matches!(err, Err(swta::Error::Config(_))));
}
