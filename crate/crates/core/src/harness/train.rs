use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::{ClipHandle, DatasetManifest, Split};
use super::prep::{assemble_batch, prepare_snippet, PrepConfig, PreparedSnippet};
use super::{epoch_checkpoint_name, thread_pool, FINAL_CHECKPOINT, MODEL_CONFIG, TRAIN_CONFIG, TRAIN_LOG};
use crate::error::{Error, Result};
use crate::media::AugmentationConfig;
use crate::model::{snippet_loss, ModelConfig, PoseConfig, PoseStream, StateDict, SwtaNet};
use crate::rng::{derive_seed_n, SplitMix64};
use crate::tensor::{bce_with_logits, save_checkpoint, Adam, AdamConfig, Mode, Tensor};

const ORDER_STREAM: u64 = 0x004f_5244_4552;
const SNIPPET_STREAM: u64 = 0x534e_4950;
const MODEL_STREAM: u64 = 0x004d_4f44_454c;
const POSE_STREAM: u64 = 0x504f_5345;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    pub final_checkpoint: PathBuf,
    pub pose_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.loss).collect()
    }
}

pub(crate) fn prep_config(cfg: &TrainConfig, model: &ModelConfig) -> Result<PrepConfig> {
    Ok(PrepConfig {
        snippet_length: cfg.snippet_length,
        input_height: model.input_height,
        input_width: model.input_width,
        attention: if cfg.fusion { Some(cfg.attention()?) } else { None },
        augmentation: Some(AugmentationConfig {
            crop_fraction_range: cfg.crop_fraction_range,
            hflip_probability: cfg.hflip_probability,
            seed: 0,
        }),
    })
}

struct PreparedBatch {
    epoch: usize,
    snippets: Result<Vec<PreparedSnippet>>,
}

/// Train on the manifest's training split, writing the log, configs and
/// checkpoints into `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    root: &Path,
    manifest: &DatasetManifest,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.num_classes != manifest.classes.len() {
        return Err(Error::config(format!(
            "model has {} classes, dataset has {}",
            model_cfg.num_classes,
            manifest.classes.len()
        )));
    }
    let clips = manifest
        .split(Split::Train)
        .into_iter()
        .map(|e| ClipHandle::open(root, e))
        .collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        return Err(Error::usage("training split is empty"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join(TRAIN_CONFIG), &cfg.to_toml())?;
    write_text(&out_dir.join(MODEL_CONFIG), &model_cfg.to_toml())?;
    let prep = prep_config(cfg, model_cfg)?;
    let pool = thread_pool()?;
    pool.install(|| train_loop(cfg, model_cfg, &clips, &prep, out_dir))
}

fn train_loop(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    clips: &[ClipHandle],
    prep: &PrepConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let mut net: SwtaNet<f32> = SwtaNet::new(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam())?;
    let log_path = out_dir.join(TRAIN_LOG);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log = Vec::new();
    let started = Instant::now();
    let (tx, rx) = sync_channel::<PreparedBatch>(cfg.queue_depth);

    let result = std::thread::scope(|scope| {
        scope.spawn(move || {
            for epoch in 0..cfg.epochs {
                let mut order: Vec<usize> = (0..clips.len()).collect();
                SplitMix64::new(derive_seed_n(cfg.seed, &[ORDER_STREAM, epoch as u64])).shuffle(&mut order);
                for chunk in order.chunks(cfg.batch_size) {
                    let snippets = chunk
                        .par_iter()
                        .map(|&ci| {
                            let seed = derive_seed_n(cfg.seed, &[SNIPPET_STREAM, ci as u64, epoch as u64]);
                            prepare_snippet(&clips[ci], prep, seed, true)
                        })
                        .collect();
                    if tx.send(PreparedBatch { epoch, snippets }).is_err() {
                        return;
                    }
                }
            }
        });

        let mut step = 0;
        let mut last_epoch = None;
        for batch in rx {
            let snippets = batch.snippets?;
            let epoch = batch.epoch;
            if last_epoch != Some(epoch) {
                if let Some(done) = last_epoch {
                    finish_epoch(cfg, &net, done, out_dir, &mut log_file)?;
                }
                last_epoch = Some(epoch);
            }
            let lr = cfg.schedule().at_epoch(epoch).learning_rate(cfg.base_lr);
            adam.set_learning_rate(lr);
            let ids: Vec<&str> = snippets.iter().map(|s| s.clip_id.as_str()).collect();
            let sb = assemble_batch(&snippets, model_cfg.num_classes)?;
            net.zero_grad();
            let step_result = net
                .forward(&sb, Mode::Train, derive_seed_n(cfg.seed, &[MODEL_STREAM, step as u64]))
                .and_then(|out| {
                    let loss = snippet_loss(&out, &sb, cfg.frame_loss_weight)?;
                    if !loss.total.is_finite() {
                        return Err(Error::numeric(format!("loss is {}", loss.total)));
                    }
                    net.backward(&out, &loss.d_frame, &loss.d_pooled)?;
                    Ok(loss.total)
                });
            let loss = match step_result {
                Ok(l) => l,
                Err(Error::Numeric(msg)) => return Err(dump_nonfinite(out_dir, epoch, step, &ids, &msg)),
                Err(e) => return Err(e),
            };
            adam.step(net.params_mut())?;
            let record = LogRecord {
                step,
                epoch,
                lr,
                loss: loss as f64,
                wall_time: started.elapsed().as_secs_f64(),
            };
            let line = serde_json::to_string(&record)?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
            log.push(record);
            step += 1;
        }
        if let Some(done) = last_epoch {
            finish_epoch(cfg, &net, done, out_dir, &mut log_file)?;
        }
        Ok(())
    });
    result?;

    let mut state = net.state();
    let mut pose_losses = Vec::new();
    if model_cfg.pose.enabled {
        let samples = clips
            .iter()
            .filter_map(|c| pose_sample(c, model_cfg.pose.frames))
            .collect::<Vec<_>>();
        if samples.is_empty() {
            return Err(Error::config(format!(
                "pose stream enabled but no training clip has {} frames of keypoints",
                model_cfg.pose.frames
            )));
        }
        let pose_cfg = PoseTraining {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.pose_lr,
            seed: cfg.seed,
        };
        let (pose, losses) = train_pose(&model_cfg.pose, &samples, &pose_cfg)?;
        state.extend(pose.state());
        pose_losses = losses;
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &state)?;
    Ok(TrainOutcome {
        log,
        final_checkpoint,
        pose_losses,
    })
}

fn finish_epoch(
    cfg: &TrainConfig,
    net: &SwtaNet<f32>,
    epoch: usize,
    out_dir: &Path,
    log_file: &mut BufWriter<File>,
) -> Result<()> {
    log_file.flush().map_err(|e| Error::io(out_dir.join(TRAIN_LOG), e))?;
    if (epoch + 1).is_multiple_of(cfg.checkpoint_every) {
        net.save(&out_dir.join(epoch_checkpoint_name(epoch + 1)))?;
    }
    Ok(())
}

fn dump_nonfinite(out_dir: &Path, epoch: usize, step: usize, clips: &[&str], msg: &str) -> Error {
    let dump = serde_json::json!({ "epoch": epoch, "step": step, "clips": clips, "error": msg });
    let path = out_dir.join("nonfinite_batch.json");
    let _ = fs::write(&path, dump.to_string());
    Error::numeric(format!(
        "non-finite value at step {step} (epoch {epoch}) on clips {clips:?}: {msg}; details in {}",
        path.display()
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keypoints of actor 0 over the centered `frames`-long window, with its
/// majority label, if the clip has them.
pub fn pose_sample(clip: &ClipHandle, frames: usize) -> Option<(Tensor<f32>, usize)> {
    let ann = &clip.annotations;
    if ann.num_frames() < frames || ann.num_actors() == 0 {
        return None;
    }
    ann.keypoints()?;
    let start = (ann.num_frames() - frames) / 2;
    let window = ann.window(start, frames);
    let label = window.actor_label(0)?;
    let mut data = Vec::with_capacity(frames * 2 * crate::media::NUM_JOINTS);
    for t in 0..frames {
        for j in window.skeleton(t, 0)? {
            data.extend_from_slice(j);
        }
    }
    let kp = Tensor::from_vec(&[frames, crate::media::NUM_JOINTS, 2], data).ok()?;
    Some((kp, label))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Stack `frames×joints×2` sequences into a batch.
pub fn stack_keypoints(samples: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = samples.first().ok_or_else(|| Error::config("no keypoint samples"))?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let data = samples.iter().flat_map(|s| s.data().iter().copied()).collect();
    Tensor::from_vec(&shape, data)
}

/// Fit a pose stream to `(keypoints, label)` samples with binary
/// cross-entropy on one-hot targets. Returns the stream and the per-step
/// losses.
pub fn train_pose(
    config: &PoseConfig,
    samples: &[(Tensor<f32>, usize)],
    training: &PoseTraining,
) -> Result<(PoseStream<f32>, Vec<f64>)> {
    let mut net = PoseStream::new(config.clone(), derive_seed_n(training.seed, &[POSE_STREAM]))?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: training.learning_rate,
        weight_decay: 0.0,
        ..AdamConfig::default()
    })?;
    let classes = config.num_classes;
    let mut losses = Vec::new();
    let mut step = 0u64;
    for epoch in 0..training.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        SplitMix64::new(derive_seed_n(training.seed, &[POSE_STREAM, ORDER_STREAM, epoch as u64])).shuffle(&mut order);
        for chunk in order.chunks(training.batch_size.max(1)) {
            let kp = stack_keypoints(&chunk.iter().map(|&i| &samples[i].0).collect::<Vec<_>>())?;
            let mut targets = Tensor::zeros(&[chunk.len(), classes]);
            for (r, &i) in chunk.iter().enumerate() {
                targets.set(&[r, samples[i].1], 1.0);
            }
            net.zero_grad();
            let logits = net.forward(&kp, Mode::Train, derive_seed_n(training.seed, &[POSE_STREAM, step]))?;
            let (loss, grad) = bce_with_logits(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("pose loss is {loss} at step {step}")));
            }
            net.backward(&grad)?;
            adam.step(net.params_mut())?;
            losses.push(loss as f64);
            step += 1;
        }
    }
    Ok((net, losses))
}

/// Split a combined checkpoint into the main network's and the pose
/// stream's entries.
pub fn split_state(state: StateDict) -> (StateDict, StateDict) {
    state.into_iter().partition(|(name, _)| !name.starts_with("pose."))
}
