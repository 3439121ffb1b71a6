mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixtures::{handmade_dataset, HANDMADE_LABELS};

fn swta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swta")).args(args).output().unwrap()
}

fn json_stdout(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sample_is_deterministic_json() {
    let a = json_stdout(&swta(&["sample", "--t", "15", "--k", "3", "--seed", "7"]));
    let b = json_stdout(&swta(&["sample", "--t", "15", "--k", "3", "--seed", "7"]));
    assert_eq!(a, b);
    let idx: Vec<u64> = serde_json::from_value(a["indices"].clone()).unwrap();
    assert_eq!(idx.len(), 3);
    assert!(idx[0] < 5 && (5..10).contains(&idx[1]) && (10..15).contains(&idx[2]));
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    assert_eq!(swta(&["sample", "--t", "15", "--bogus"]).status.code(), Some(2));
    assert_eq!(swta(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(swta(&["sample"]).status.code(), Some(2));
    let missing = swta(&["flow", "--a", "/nonexistent/a.png", "--b", "/nonexistent/b.png", "--out", "/tmp/x.flo"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn eval_of_perfect_prediction_file_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    handmade_dataset(dir.path());
    let clips: serde_json::Map<String, serde_json::Value> = HANDMADE_LABELS
        .iter()
        .map(|(id, frames)| (id.to_string(), serde_json::json!(frames)))
        .collect();
    let preds = dir.path().join("preds.json");
    std::fs::write(&preds, serde_json::json!({ "clips": clips }).to_string()).unwrap();
    let report = json_stdout(&swta(&["eval", "--data", p(dir.path()), "--predictions", p(&preds)]));
    assert_eq!(report["top1"], serde_json::json!(1.0));
}

#[test]
fn synth_flow_attend_and_overlay_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = swta(&["gen-synth", "--out", p(&data), "--clips", "2", "--frames", "6", "--size", "32", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let clip = data.join("clip_0000");
    let frames = clip.join("frames");
    let sample = json_stdout(&swta(&["sample", "--frames", p(&frames), "--k", "3", "--seed", "1"]));
    assert_eq!(sample["T"], 6);

    let flo = dir.path().join("pair.flo");
    let status = swta(&[
        "flow",
        "--a",
        p(&frames.join("0001.png")),
        "--b",
        p(&frames.join("0002.png")),
        "--out",
        p(&flo),
    ])
    .status;
    assert!(status.success());
    let bytes = std::fs::read(&flo).unwrap();
    assert_eq!(&bytes[..7], b"SWTAFLO");
    assert_eq!(bytes.len(), 7 + 8 + 2 * 32 * 32 * 4);

    let fused = dir.path().join("fused");
    let out = swta(&[
        "attend",
        "--frames",
        p(&frames),
        "--t",
        "6",
        "--k",
        "3",
        "--weights",
        "0.033",
        "--boxes",
        p(&clip.join("annotations.json")),
        "--out",
        p(&fused),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..6 {
        assert!(fused.join(format!("fused_{i:04}.png")).exists());
    }
    let attention = fused.join("attention.flo");
    let overlay = dir.path().join("overlay.png");
    let out = swta(&[
        "render-overlay",
        "--input",
        p(&attention),
        "--frame",
        p(&frames.join("0001.png")),
        "--out",
        p(&overlay),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(overlay.exists());
}

#[test]
fn bench_prints_verdicts_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let report = json_stdout(&swta(&[
        "bench",
        "--t",
        "4,8",
        "--d",
        "16",
        "--iterations",
        "2",
        "--csv",
        p(&csv),
    ]));
    let verdicts = report["verdicts"].as_array().unwrap();
    assert!(verdicts.iter().any(|v| v["check"] == "flow_calls_equal_K_minus_1" && v["pass"] == true));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("T,K,d,phase,seconds\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert_eq!(swta(&["bench", "--runs", "2"]).status.code(), Some(1));
}

#[test]
fn train_then_eval_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = swta(&["gen-synth", "--out", p(&data), "--classes", "2", "--clips", "5", "--frames", "6", "--size", "16", "--sprite-size", "4", "--speed", "1"]).status;
    assert!(status.success());
    let train_cfg = dir.path().join("train.toml");
    std::fs::write(&train_cfg, "snippet_length = 6\nepochs = 2\nbase_lr = 0.001\n").unwrap();
    let model_cfg = dir.path().join("model.toml");
    std::fs::write(
        &model_cfg,
        "num_classes = 2\ninput_height = 16\ninput_width = 16\n\n[backbone]\nin_channels = 3\n\n[[backbone.blocks]]\nout_channels = 4\nkernel = 3\nstride = 2\n\n[head]\nfc_units = 8\ndropout = 0.3\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = swta(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&train_cfg),
        "--model",
        p(&model_cfg),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_stdout(&swta(&["eval", "--data", p(&data), "--run", p(&run)]));
    let top1 = report["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert!(report["total"].as_u64().unwrap() > 0);

    std::fs::write(&train_cfg, "unknown_key = 1\n").unwrap();
    let bad = swta(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&train_cfg)]);
    assert_eq!(bad.status.code(), Some(1));
}
