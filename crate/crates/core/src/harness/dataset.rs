use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{
    generate_synthetic_scene, png_paths, read_png, save_clip, ActorAnnotations, AnnotationFile, MotionClass, SceneSpec,
    SpriteSpec,
};
use crate::rng::{derive_seed, derive_seed_n, SplitMix64};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATION_FILE: &str = "annotations.json";
pub const TRAIN_FRACTION: f64 = 0.8;

const SPLIT_STREAM: u64 = 0x0053_504c_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::usage(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub split: Split,
}

/// Clips of a dataset root with a per-clip train/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub split_ratio: (f64, f64),
    pub seed: u64,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    /// Every subdirectory of `root` holding an annotation file, in name
    /// order, split by a seeded shuffle.
    pub fn scan(root: &Path, seed: u64) -> Result<Self> {
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().join(ANNOTATION_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        if ids.is_empty() {
            return Err(Error::ingestion(format!("no clips with {ANNOTATION_FILE} under {}", root.display())));
        }
        let mut classes: Option<Vec<String>> = None;
        for id in &ids {
            let ann = read_annotations(&root.join(id))?;
            match &classes {
                None => classes = Some(ann.classes.clone()),
                Some(c) if *c != ann.classes => {
                    return Err(Error::ingestion(format!("clip {id} has a different class list")));
                }
                Some(_) => {}
            }
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        SplitMix64::new(derive_seed(seed, SPLIT_STREAM)).shuffle(&mut order);
        let n_train = ((ids.len() as f64) * TRAIN_FRACTION).round() as usize;
        let mut split = vec![Split::Test; ids.len()];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        let clips = ids
            .into_iter()
            .zip(split)
            .map(|(id, split)| ClipEntry {
                path: PathBuf::from(&id),
                id,
                split,
            })
            .collect();
        Ok(Self {
            classes: classes.unwrap_or_default(),
            split_ratio: (TRAIN_FRACTION, 1.0 - TRAIN_FRACTION),
            seed,
            clips,
        })
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// The saved manifest if present, otherwise a fresh scan.
    pub fn open(root: &Path, seed: u64) -> Result<Self> {
        if root.join(MANIFEST_FILE).is_file() {
            Self::load(root)
        } else {
            Self::scan(root, seed)
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.clips.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::ingestion(format!("clip {} listed twice", w[0])));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ClipEntry> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }
}

fn read_annotations(dir: &Path) -> Result<ActorAnnotations> {
    let path = dir.join(ANNOTATION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| Error::ingestion(format!("{}: {e}", path.display())))?;
    ActorAnnotations::from_file(&file)
}

/// A clip's annotations plus the paths of its frames, read on demand.
#[derive(Debug, Clone)]
pub struct ClipHandle {
    pub id: String,
    pub frame_paths: Vec<PathBuf>,
    pub annotations: ActorAnnotations,
}

impl ClipHandle {
    pub fn open(root: &Path, entry: &ClipEntry) -> Result<Self> {
        let dir = root.join(&entry.path);
        let annotations = read_annotations(&dir)?;
        let frame_paths = png_paths(&dir.join("frames"))?;
        if frame_paths.len() != annotations.num_frames() {
            return Err(Error::ingestion(format!(
                "clip {}: {} frames but {} annotated",
                entry.id,
                frame_paths.len(),
                annotations.num_frames()
            )));
        }
        Ok(Self {
            id: entry.id.clone(),
            frame_paths,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    pub fn read_frames(&self, start: usize, len: usize) -> Result<Vec<Tensor<f32>>> {
        if start + len > self.len() {
            return Err(Error::config(format!(
                "clip {}: window {start}..{} exceeds {} frames",
                self.id,
                start + len,
                self.len()
            )));
        }
        self.frame_paths[start..start + len].iter().map(|p| read_png(p)).collect()
    }
}

/// Parameters of a generated motion dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    /// Uses the first `classes` entries of [`MotionClass::ALL`].
    pub classes: usize,
    pub clips: usize,
    pub frames: usize,
    /// Frame side in pixels.
    pub size: usize,
    pub actors: usize,
    pub sprite_size: usize,
    pub speed: f64,
    pub keypoints: bool,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            clips: 60,
            frames: 15,
            size: 64,
            actors: 1,
            sprite_size: 12,
            speed: 2.0,
            keypoints: false,
            seed: 1,
        }
    }
}

/// Write `spec.clips` clips under `root` (`clip_0000`, ...), classes
/// assigned round-robin, plus a manifest split with `spec.seed`.
pub fn generate_synthetic_dataset(root: &Path, spec: &SyntheticDatasetSpec) -> Result<DatasetManifest> {
    if spec.classes == 0 || spec.classes > MotionClass::ALL.len() {
        return Err(Error::config(format!(
            "synthetic datasets support 1 to {} classes, got {}",
            MotionClass::ALL.len(),
            spec.classes
        )));
    }
    if spec.clips == 0 || spec.actors == 0 {
        return Err(Error::config("synthetic dataset needs at least one clip and one actor"));
    }
    let classes = MotionClass::ALL[..spec.classes].to_vec();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for i in 0..spec.clips {
        let sprites = (0..spec.actors)
            .map(|a| SpriteSpec {
                motion: classes[(i + a) % classes.len()],
                speed: spec.speed,
                size: spec.sprite_size,
            })
            .collect();
        let scene = SceneSpec {
            height: spec.size,
            width: spec.size,
            frames: spec.frames,
            sprites,
            keypoints: spec.keypoints,
            classes: classes.clone(),
            ..SceneSpec::default()
        };
        let (seq, ann) = generate_synthetic_scene(&scene, derive_seed_n(spec.seed, &[i as u64]))?;
        save_clip(&root.join(format!("clip_{i:04}")), &seq, &ann)?;
    }
    let manifest = DatasetManifest::scan(root, spec.seed)?;
    manifest.save(root)?;
    Ok(manifest)
}
