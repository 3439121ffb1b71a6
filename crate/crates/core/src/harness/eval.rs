use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::{ClipHandle, DatasetManifest, Split};
use super::prep::{assemble_batch, prepare_snippet, PrepConfig, PreparedSnippet};
use super::train::{pose_sample, split_state, stack_keypoints};
use super::{thread_pool, FINAL_CHECKPOINT, MODEL_CONFIG, TRAIN_CONFIG};
use crate::error::{Error, Result};
use crate::model::{late_fuse, ModelConfig, PoseStream, SwtaNet};
use crate::rng::derive_seed_n;
use crate::tensor::{load_checkpoint, Mode, Tensor};

const EVAL_STREAM: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub correct: usize,
    pub total: usize,
    /// `None` when the class has no evaluated slots.
    pub accuracy: Option<f64>,
}

/// Top-1 accuracy over evaluated (frame, actor) slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub top1: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassAccuracy>,
}

impl MetricReport {
    /// Score `(predicted, truth)` pairs, one per present slot. A missing
    /// prediction counts as wrong.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Option<usize>, usize)>, classes: &[String]) -> Result<Self> {
        let mut per = vec![(0usize, 0usize); classes.len()];
        let (mut correct, mut total) = (0, 0);
        for (pred, truth) in pairs {
            let hit = pred == Some(truth);
            total += 1;
            correct += hit as usize;
            if let Some(slot) = per.get_mut(truth) {
                slot.0 += hit as usize;
                slot.1 += 1;
            }
        }
        if total == 0 {
            return Err(Error::usage("nothing to evaluate: no present slots in the split"));
        }
        Ok(Self {
            top1: correct as f64 / total as f64,
            correct,
            total,
            per_class: classes
                .iter()
                .zip(per)
                .map(|(c, (ok, n))| ClassAccuracy {
                    class: c.clone(),
                    correct: ok,
                    total: n,
                    accuracy: (n > 0).then(|| ok as f64 / n as f64),
                })
                .collect(),
        })
    }
}

/// Per-clip model output: one prediction per present slot, broadcast from
/// the actor's pooled (and optionally pose-fused) probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub actors: usize,
    /// `N×classes` pooled logits of the main stream.
    pub pooled_logits: Vec<f32>,
    /// `N×classes` probabilities used for the decision.
    pub probabilities: Vec<f32>,
    /// `T·N` predicted classes, `None` at absent slots.
    pub predictions: Vec<Option<usize>>,
    pub labels: Vec<Option<usize>>,
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// A trained run: configs, network and optional pose stream.
pub struct TrainedModel {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub net: SwtaNet<f32>,
    pub pose: Option<PoseStream<f32>>,
}

impl TrainedModel {
    /// Load the configs of `run_dir` and `checkpoint` (default: the final
    /// checkpoint of the run).
    pub fn load(run_dir: &Path, checkpoint: Option<&Path>) -> Result<Self> {
        let train = TrainConfig::load(&run_dir.join(TRAIN_CONFIG))?;
        let model = ModelConfig::load(&run_dir.join(MODEL_CONFIG))?;
        let path = checkpoint.map_or_else(|| run_dir.join(FINAL_CHECKPOINT), Path::to_path_buf);
        let (main, pose_state) = split_state(load_checkpoint(&path)?);
        let mut net = SwtaNet::new(model.clone(), 0)?;
        net.load_state(&main)?;
        let pose = if model.pose.enabled {
            let mut p = PoseStream::new(model.pose.clone(), 0)?;
            p.load_state(&pose_state)?;
            Some(p)
        } else {
            None
        };
        Ok(Self { train, model, net, pose })
    }

    pub fn prep_config(&self) -> Result<PrepConfig> {
        let mut prep = super::train::prep_config(&self.train, &self.model)?;
        prep.augmentation = None;
        Ok(prep)
    }
}

/// Evaluation snippets for `clips`, seeded by position in the manifest.
pub fn eval_snippets(
    clips: &[(usize, ClipHandle)],
    prep: &PrepConfig,
    seed: u64,
) -> Result<Vec<PreparedSnippet>> {
    clips
        .par_iter()
        .map(|(index, clip)| prepare_snippet(clip, prep, derive_seed_n(seed, &[EVAL_STREAM, *index as u64]), false))
        .collect()
}

/// Run the network in eval mode over `snippets`, `batch_size` at a time.
/// `pose_inputs` (one optional keypoint sequence per snippet) enables late
/// fusion for single-actor snippets.
pub fn predict(
    net: &mut SwtaNet<f32>,
    mut pose: Option<&mut PoseStream<f32>>,
    snippets: &[PreparedSnippet],
    pose_inputs: Option<&[Option<Tensor<f32>>]>,
    batch_size: usize,
) -> Result<Vec<ClipPrediction>> {
    let classes = net.config().num_classes;
    let mode = net.config().head_mode;
    let mut out = Vec::with_capacity(snippets.len());
    for (chunk_index, chunk) in snippets.chunks(batch_size.max(1)).enumerate() {
        let batch = assemble_batch(chunk, classes)?;
        let result = net.forward(&batch, Mode::Eval, 0)?;
        let n = batch.actors;
        let probs = mode.probabilities(&result.pooled.values)?;
        for (bi, s) in chunk.iter().enumerate() {
            let pooled = result.pooled.values.data()[bi * n * classes..(bi + 1) * n * classes].to_vec();
            let mut p = probs.data()[bi * n * classes..(bi + 1) * n * classes].to_vec();
            let kp = pose_inputs.and_then(|inputs| inputs[chunk_index * batch_size.max(1) + bi].as_ref());
            if let (Some(stream), Some(kp), 1) = (pose.as_deref_mut(), kp, n) {
                let pose_probs = stream.probabilities(&stack_keypoints(&[kp])?, Mode::Eval, 0)?;
                let main = Tensor::from_vec(&[1, 1, classes], p)?;
                p = late_fuse(&main, &pose_probs)?.into_data();
            }
            let per_actor: Vec<usize> = p.chunks(classes).map(argmax).collect();
            let t = batch.time;
            let mut predictions = Vec::with_capacity(t * s.actors);
            for ti in 0..t {
                for ni in 0..s.actors {
                    predictions.push(s.boxes[ti * s.actors + ni].map(|_| per_actor[ni]));
                }
            }
            out.push(ClipPrediction {
                clip_id: s.clip_id.clone(),
                actors: s.actors,
                pooled_logits: pooled[..s.actors * classes].to_vec(),
                probabilities: p[..s.actors * classes].to_vec(),
                predictions,
                labels: s.labels.clone(),
            });
        }
    }
    Ok(out)
}

/// Score model predictions against their snippets' labels.
pub fn score(predictions: &[ClipPrediction], classes: &[String]) -> Result<MetricReport> {
    let pairs = predictions.iter().flat_map(|c| {
        c.predictions
            .iter()
            .zip(&c.labels)
            .filter_map(|(p, l)| l.map(|truth| (*p, truth)))
    });
    MetricReport::from_pairs(pairs, classes)
}

/// Evaluate a loaded model on one split of a dataset.
pub fn evaluate_model(
    trained: &mut TrainedModel,
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(MetricReport, Vec<ClipPrediction>)> {
    let clips = manifest
        .clips
        .iter()
        .enumerate()
        .filter(|(_, c)| c.split == split)
        .map(|(i, c)| Ok((i, ClipHandle::open(root, c)?)))
        .collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        return Err(Error::usage(format!("the {split} split is empty")));
    }
    let prep = trained.prep_config()?;
    let pool = thread_pool()?;
    pool.install(|| {
        let snippets = eval_snippets(&clips, &prep, trained.train.seed)?;
        let pose_inputs: Option<Vec<Option<Tensor<f32>>>> = trained.pose.as_ref().map(|p| {
            clips
                .iter()
                .map(|(_, c)| pose_sample(c, p.config().frames).map(|(kp, _)| kp))
                .collect()
        });
        let batch_size = trained.train.batch_size;
        let preds = predict(
            &mut trained.net,
            trained.pose.as_mut(),
            &snippets,
            pose_inputs.as_deref(),
            batch_size,
        )?;
        Ok((score(&preds, &manifest.classes)?, preds))
    })
}

/// Evaluate the run in `run_dir` on one split.
pub fn evaluate(run_dir: &Path, root: &Path, manifest: &DatasetManifest, split: Split) -> Result<MetricReport> {
    let mut trained = TrainedModel::load(run_dir, None)?;
    Ok(evaluate_model(&mut trained, root, manifest, split)?.0)
}

/// Externally produced predictions: per clip, per frame, per actor slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub clips: BTreeMap<String, Vec<Vec<Option<usize>>>>,
}

/// Score a prediction file against every annotated slot of the split's
/// clips. Slots without a prediction count as wrong.
pub fn score_prediction_file(
    predictions: &PredictionFile,
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<MetricReport> {
    let mut pairs = Vec::new();
    for entry in manifest.split(split) {
        let clip = ClipHandle::open(root, entry)?;
        let ann = &clip.annotations;
        let pred = predictions.clips.get(&entry.id);
        for t in 0..ann.num_frames() {
            for n in 0..ann.num_actors() {
                if let Some(truth) = ann.label_at(t, n) {
                    let p = pred.and_then(|p| p.get(t)).and_then(|f| f.get(n)).copied().flatten();
                    pairs.push((p, truth));
                }
            }
        }
    }
    MetricReport::from_pairs(pairs, &manifest.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let r = MetricReport::from_pairs((0..6).map(|i| (Some(i % 3), i % 3)), &names(3)).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.total, 6);
    }

    #[test]
    fn half_of_ten_is_one_half() {
        let pairs = (0..10).map(|i| (Some(if i < 5 { 1 } else { 0 }), 1));
        let r = MetricReport::from_pairs(pairs, &names(2)).unwrap();
        assert_eq!(r.top1, 0.5);
        assert_eq!(r.per_class[1].accuracy, Some(0.5));
        assert_eq!(r.per_class[0].accuracy, None);
    }

    #[test]
    fn empty_split_is_usage_error() {
        assert!(matches!(
            MetricReport::from_pairs(std::iter::empty(), &names(2)),
            Err(Error::Usage(_))
        ));
    }
}
