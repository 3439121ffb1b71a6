use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use swta::attention::{heat_overlay, AttentionMode, AttentionPipeline, WeightVector};
use swta::flow::{estimate_flow, load_flow, save_flow, to_grayscale, FlowField, FlowParams};
use swta::harness::{
    benchmark_wta, evaluate_model, generate_synthetic_dataset, records_to_csv, scaling_verdicts, score_prediction_file,
    train, BenchCell, BenchOptions, DatasetManifest, PredictionFile, Split, SyntheticDatasetSpec, TrainConfig,
    TrainedModel,
};
use swta::media::{load_frames, png_paths, read_png, write_png, ActorAnnotations, AnnotationFile};
use swta::model::ModelConfig;
use swta::plane::Plane;
use swta::sampler::SegmentPlan;
use swta::{Error, Result};

#[derive(Parser)]
#[command(name = "swta", version, about = "Sparse weighted temporal attention for drone action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the frames chosen by segment sampling as JSON.
    Sample(SampleArgs),
    /// Estimate dense optical flow between two frames.
    Flow(FlowArgs),
    /// Fuse a snippet with its weighted temporal attention map.
    Attend(AttendArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score a trained run or a prediction file; prints a JSON report.
    Eval(EvalArgs),
    /// Time the attention phases over a grid of (T, K, d); prints JSON.
    Bench(BenchArgs),
    /// Colour the magnitude of a flow or attention file as a heat map.
    RenderOverlay(OverlayArgs),
    /// Write a synthetic moving-sprite dataset.
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Directory of PNG frames; its frame count is the default `--t`.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FlowParamArgs {
    #[arg(long, default_value_t = FlowParams::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = FlowParams::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = FlowParams::default().pyramid_levels)]
    levels: usize,
}

impl FlowParamArgs {
    fn params(&self) -> FlowParams {
        FlowParams {
            alpha: self.alpha,
            iterations: self.iterations,
            pyramid_levels: self.levels,
            ..FlowParams::default()
        }
    }
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Output in the SWTAFLO container.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flow: FlowParamArgs,
}

#[derive(Args)]
struct AttendArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Snippet length; defaults to every frame from `--start`.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// One weight for all K-1 flows, or K-1 comma-separated weights.
    #[arg(long, value_delimiter = ',', default_value = "0.033")]
    weights: Vec<f32>,
    /// Annotation file whose actor boxes restrict the attention.
    #[arg(long)]
    boxes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate flow inside each actor's crop instead of the full frame.
    #[arg(long)]
    per_actor: bool,
    #[command(flatten)]
    flow: FlowParamArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root with one directory per clip.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for configs, log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Training config (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model config (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory written by `train`.
    #[arg(long, required_unless_present = "predictions")]
    run: Option<PathBuf>,
    /// Checkpoint to load instead of the run's final one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score a prediction file instead of a model.
    #[arg(long, conflicts_with_all = ["run", "checkpoint"])]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Manifest seed used when the dataset has no manifest.json.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "15,30")]
    t: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    d: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowParamArgs,
}

#[derive(Args)]
struct OverlayArgs {
    /// Flow or attention file in the SWTAFLO container.
    #[arg(long)]
    input: PathBuf,
    /// Frame to blend under the heat map.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    alpha: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    clips: usize,
    #[arg(long, default_value_t = 15)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    actors: usize,
    #[arg(long, default_value_t = SyntheticDatasetSpec::default().sprite_size)]
    sprite_size: usize,
    /// Sprite speed in pixels per frame.
    #[arg(long, default_value_t = SyntheticDatasetSpec::default().speed)]
    speed: f64,
    #[arg(long)]
    keypoints: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed reader (`swta eval | head`) is not an error.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(swta::Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn sample(args: SampleArgs) -> Result<()> {
    let available = match &args.frames {
        Some(dir) => Some(png_paths(dir)?.len()),
        None => None,
    };
    let t = match (args.t, available) {
        (Some(t), Some(n)) if t > n => {
            return Err(Error::Usage(format!("--t {t} exceeds the {n} frames available")));
        }
        (Some(t), _) => t,
        (None, Some(n)) => n,
        (None, None) => return Err(Error::Usage("give --t or --frames".into())),
    };
    let plan = SegmentPlan::new(t, args.k)?;
    let sampled = plan.sample(args.seed);
    print_json(&json!({
        "T": t,
        "K": args.k,
        "seed": args.seed,
        "segments": plan.segments().iter().map(|r| [r.start, r.end]).collect::<Vec<_>>(),
        "indices": sampled.indices,
    }))
}

fn flow(args: FlowArgs) -> Result<()> {
    let a = to_grayscale(&read_png(&args.a)?)?;
    let b = to_grayscale(&read_png(&args.b)?)?;
    let field = estimate_flow(&a, &b, &args.flow.params())?;
    save_flow(&args.out, &field)
}

fn attend(args: AttendArgs) -> Result<()> {
    let sequence = load_frames(&args.frames)?;
    let available = sequence.len().saturating_sub(args.start);
    let t = args.t.unwrap_or(available);
    if t == 0 || t > available {
        return Err(Error::Usage(format!(
            "snippet of {t} frames from {} does not fit {} frames",
            args.start,
            sequence.len()
        )));
    }
    let snippet = &sequence.frames[args.start..args.start + t];
    let weights = match args.weights.as_slice() {
        [w] => WeightVector::uniform(args.k.saturating_sub(1), *w)?,
        ws => WeightVector::new(ws.to_vec())?,
    };
    let pipeline = AttentionPipeline {
        segments: args.k,
        weights,
        flow: args.flow.params(),
        mode: if args.per_actor {
            AttentionMode::PerActorCrop
        } else {
            AttentionMode::FullFrame
        },
    };
    let boxes = match &args.boxes {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let file: AnnotationFile = serde_json::from_str(&text)?;
            ActorAnnotations::from_file(&file)?
                .window(args.start, t)
                .actor_extents()
                .into_iter()
                .flatten()
                .collect()
        }
        None => Vec::new(),
    };
    let fused = pipeline.run(snippet, &boxes, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for (i, frame) in fused.frames.iter().enumerate() {
        write_png(&args.out.join(format!("fused_{i:04}.png")), frame)?;
    }
    let (h, w) = fused.attention.dims();
    save_flow(
        &args.out.join("attention.flo"),
        &FlowField {
            u: fused.attention.values.clone(),
            v: Plane::filled(h, w, 0.0),
        },
    )
}

fn load_toml_or_default<T: Default>(path: Option<&Path>, load: impl Fn(&Path) -> Result<T>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load)
}

fn train_run(args: TrainArgs) -> Result<()> {
    let mut cfg = load_toml_or_default(args.config.as_deref(), TrainConfig::load)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let model = load_toml_or_default(args.model.as_deref(), ModelConfig::load)?;
    let manifest = DatasetManifest::open(&args.data, cfg.seed)?;
    let outcome = train(&cfg, &model, &args.data, &manifest, &args.out)?;
    let losses = outcome.losses();
    eprintln!(
        "trained {} steps, final loss {:.5}, checkpoint {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let report = match (&args.predictions, &args.run) {
        (Some(path), _) => {
            let manifest = DatasetManifest::open(&args.data, args.seed)?;
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let predictions: PredictionFile = serde_json::from_str(&text)?;
            score_prediction_file(&predictions, &args.data, &manifest, args.split)?
        }
        (None, Some(run)) => {
            let mut trained = TrainedModel::load(run, args.checkpoint.as_deref())?;
            let manifest = DatasetManifest::open(&args.data, trained.train.seed)?;
            evaluate_model(&mut trained, &args.data, &manifest, args.split)?.0
        }
        (None, None) => return Err(Error::Usage("give --run or --predictions".into())),
    };
    print_json(&report)
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cells = Vec::new();
    for &t in &args.t {
        for &k in &args.k {
            for &d in &args.d {
                cells.push(BenchCell { t, k, d });
            }
        }
    }
    let options = BenchOptions {
        runs: args.runs,
        flow: args.flow.params(),
        seed: args.seed,
        ..BenchOptions::default()
    };
    let records = benchmark_wta(&cells, &options)?;
    if let Some(path) = &args.csv {
        fs::write(path, records_to_csv(&records)).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    let verdicts = scaling_verdicts(&records);
    print_json(&json!({ "records": records, "verdicts": verdicts }))
}

fn render_overlay(args: OverlayArgs) -> Result<()> {
    let field = load_flow(&args.input)?;
    let frame = args.frame.as_deref().map(read_png).transpose()?;
    let image = heat_overlay(&field.magnitude(), frame.as_ref(), args.alpha)?;
    write_png(&args.out, &image)
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let spec = SyntheticDatasetSpec {
        classes: args.classes,
        clips: args.clips,
        frames: args.frames,
        size: args.size,
        actors: args.actors,
        sprite_size: args.sprite_size,
        speed: args.speed,
        keypoints: args.keypoints,
        seed: args.seed,
    };
    let manifest = generate_synthetic_dataset(&args.out, &spec)?;
    eprintln!(
        "wrote {} clips ({} train, {} test) to {}",
        manifest.clips.len(),
        manifest.split(Split::Train).len(),
        manifest.split(Split::Test).len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Flow(a) => flow(a),
        Command::Attend(a) => attend(a),
        Command::Train(a) => train_run(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::RenderOverlay(a) => render_overlay(a),
        Command::GenSynth(a) => gen_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
