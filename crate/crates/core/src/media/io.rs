use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::{ActorAnnotations, AnnotationFile, FrameSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PNG files in `dir`, sorted by file name.
pub fn png_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Read a PNG as a `3×H×W` tensor in `[0, 255]`.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Write a `3×H×W` frame, rounding and clamping to 8 bits.
pub fn write_png(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    if frame.rank() != 3 || frame.dim(0) != 3 {
        return Err(Error::config(format!(
            "write_png: expected 3xHxW, got {:?}",
            frame.shape()
        )));
    }
    let (h, w) = (frame.dim(1), frame.dim(2));
    let d = frame.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| d[(c * h + y as usize) * w + x as usize].round().clamp(0.0, 255.0) as u8;
        Rgb([at(0), at(1), at(2)])
    });
    img.save(path)?;
    Ok(())
}

/// Load every PNG in `dir` in lexicographic file-name order.
pub fn load_frames(dir: &Path) -> Result<FrameSequence> {
    let paths = png_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::ingestion(format!("no PNG frames in {}", dir.display())));
    }
    let frames = paths.iter().map(|p| read_png(p)).collect::<Result<Vec<_>>>()?;
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameSequence::new(frames, 30.0, id)
}

/// Write frames as `0001.png`, `0002.png`, ...
pub fn save_frames(dir: &Path, frames: &[Tensor<f32>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_png(&dir.join(format!("{:04}.png", i + 1)), f)?;
    }
    Ok(())
}

/// Load `<clip>/frames/*.png` and `<clip>/annotations.json`.
pub fn load_clip(clip_dir: &Path) -> Result<(FrameSequence, ActorAnnotations)> {
    let mut seq = load_frames(&clip_dir.join("frames"))?;
    let ann_path = clip_dir.join("annotations.json");
    let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)?;
    let ann = ActorAnnotations::from_file(&file)?;
    if ann.num_frames() != seq.len() {
        return Err(Error::ingestion(format!(
            "{}: {} frames but {} annotated frames",
            clip_dir.display(),
            seq.len(),
            ann.num_frames()
        )));
    }
    seq.frame_rate = ann.fps;
    seq.source_id = clip_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((seq, ann))
}

pub fn save_clip(clip_dir: &Path, seq: &FrameSequence, ann: &ActorAnnotations) -> Result<()> {
    save_frames(&clip_dir.join("frames"), &seq.frames)?;
    let path = clip_dir.join("annotations.json");
    let text = serde_json::to_string(&ann.to_file())?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
