//! Training, evaluation, dataset handling and the attention benchmark.

mod bench;
mod config;
mod dataset;
mod eval;
mod prep;
mod train;

pub use bench::{
    benchmark_wta, drifting_snippet, records_to_csv, scaling_verdicts, time_median, BenchCell, BenchOptions,
    BenchRecord, CountingEstimator, Phase, Verdict,
};
pub use config::TrainConfig;
pub use dataset::{
    generate_synthetic_dataset, ClipEntry, ClipHandle, DatasetManifest, Split, SyntheticDatasetSpec, ANNOTATION_FILE,
    MANIFEST_FILE, TRAIN_FRACTION,
};
pub use eval::{
    eval_snippets, evaluate, evaluate_model, predict, score, score_prediction_file, ClassAccuracy, ClipPrediction,
    MetricReport, PredictionFile, TrainedModel,
};
pub use prep::{assemble_batch, prepare_snippet, PrepConfig, PreparedSnippet};
pub use train::{pose_sample, split_state, stack_keypoints, train, train_pose, LogRecord, PoseTraining, TrainOutcome};

use crate::error::{Error, Result};

pub const TRAIN_LOG: &str = "train.jsonl";
pub const TRAIN_CONFIG: &str = "train.toml";
pub const MODEL_CONFIG: &str = "model.toml";
pub const FINAL_CHECKPOINT: &str = "final.swta";
/// Caps the worker threads used by training and evaluation.
pub const THREADS_ENV: &str = "SWTA_THREADS";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.swta")
}

/// Worker pool sized by [`THREADS_ENV`] when set, otherwise by the
/// available parallelism.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}
