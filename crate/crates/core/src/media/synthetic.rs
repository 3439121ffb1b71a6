//! Procedural clips of textured sprites moving over a static textured
//! background, with exact boxes, motion labels and rigid 18-joint skeletons.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ActorAnnotations, Box2, FrameSequence, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const PLACEMENT_ATTEMPTS: usize = 100;
const OSCILLATION_PERIOD: f64 = 12.0;

/// Joint positions inside the sprite's unit square.
const SKELETON: [[f32; 2]; NUM_JOINTS] = [
    [0.50, 0.10],
    [0.50, 0.25],
    [0.30, 0.25],
    [0.20, 0.45],
    [0.15, 0.60],
    [0.70, 0.25],
    [0.80, 0.45],
    [0.85, 0.60],
    [0.40, 0.60],
    [0.38, 0.80],
    [0.36, 0.98],
    [0.60, 0.60],
    [0.62, 0.80],
    [0.64, 0.98],
    [0.45, 0.07],
    [0.55, 0.07],
    [0.40, 0.10],
    [0.60, 0.10],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    MoveRight,
    MoveUp,
    Static,
    Oscillate,
}

impl MotionClass {
    /// Order in which dataset generators assign classes.
    pub const ALL: [MotionClass; 4] = [
        MotionClass::MoveRight,
        MotionClass::MoveUp,
        MotionClass::Static,
        MotionClass::Oscillate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::MoveRight => "move_right",
            MotionClass::MoveUp => "move_up",
            MotionClass::Static => "static",
            MotionClass::Oscillate => "oscillate",
        }
    }

    /// Displacement of the sprite after `t` frames.
    pub fn offset(self, t: usize, speed: f64) -> (f64, f64) {
        let t = t as f64;
        match self {
            MotionClass::MoveRight => (speed * t, 0.0),
            MotionClass::MoveUp => (0.0, -speed * t),
            MotionClass::Static => (0.0, 0.0),
            MotionClass::Oscillate => {
                let amplitude = speed * OSCILLATION_PERIOD / (2.0 * PI);
                (amplitude * (2.0 * PI * t / OSCILLATION_PERIOD).sin(), 0.0)
            }
        }
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown motion class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub motion: MotionClass,
    /// Pixels per frame.
    pub speed: f64,
    /// Side of the square sprite in pixels.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub fps: f64,
    pub sprites: Vec<SpriteSpec>,
    /// Amplitude of the static background texture.
    pub background_noise: f64,
    pub keypoints: bool,
    /// Label space: a sprite's label is the index of its motion here.
    pub classes: Vec<MotionClass>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 15,
            fps: 30.0,
            sprites: Vec::new(),
            background_noise: 20.0,
            keypoints: false,
            classes: MotionClass::ALL.to_vec(),
        }
    }
}

struct Texture {
    size: usize,
    rgb: Vec<[f32; 3]>,
}

fn sprite_texture(size: usize, rng: &mut SplitMix64) -> Texture {
    let bright = [rng.uniform(170.0, 255.0), rng.uniform(170.0, 255.0), rng.uniform(170.0, 255.0)];
    let dark = [rng.uniform(0.0, 80.0), rng.uniform(0.0, 80.0), rng.uniform(0.0, 80.0)];
    let cell = 3;
    let mut rgb = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let checker = ((x / cell) + (y / cell)) % 2 == 0;
            let shade = 0.75 + 0.25 * (x + y) as f64 / (2 * size) as f64;
            let base = if checker { bright } else { dark };
            rgb.push([
                (base[0] * shade) as f32,
                (base[1] * shade) as f32,
                (base[2] * shade) as f32,
            ]);
        }
    }
    Texture { size, rgb }
}

fn background(spec: &SceneSpec, rng: &mut SplitMix64) -> Tensor<f32> {
    let (h, w) = (spec.height, spec.width);
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4), rng.uniform(0.0, 2.0 * PI)))
        .collect();
    let tint = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum::<f64>()
                / waves.len() as f64;
            for (c, t) in tint.iter().enumerate() {
                let v = 110.0 + t + spec.background_noise * s;
                out.set(&[c, y, x], v.clamp(0.0, 255.0) as f32);
            }
        }
    }
    out
}

/// Integer sprite origins for every frame, relative to the spawn point.
fn trajectory(sprite: &SpriteSpec, frames: usize) -> Vec<(i64, i64)> {
    (0..frames)
        .map(|t| {
            let (dx, dy) = sprite.motion.offset(t, sprite.speed);
            (dx.round() as i64, dy.round() as i64)
        })
        .collect()
}

fn overlaps(a: (i64, i64), sa: usize, b: (i64, i64), sb: usize) -> bool {
    a.0 < b.0 + sb as i64 && b.0 < a.0 + sa as i64 && a.1 < b.1 + sb as i64 && b.1 < a.1 + sa as i64
}

/// Render a clip from `spec`. Boxes are the exact pixel extent of each
/// sprite, labels are motion classes, and the same seed reproduces the
/// same clip bit for bit.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<(FrameSequence, ActorAnnotations)> {
    if spec.frames == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::config("synthetic scene needs positive frames and dims"));
    }
    let labels = spec
        .sprites
        .iter()
        .map(|s| {
            spec.classes
                .iter()
                .position(|&c| c == s.motion)
                .ok_or_else(|| Error::config(format!("motion {} is not in the class list", s.motion)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = SplitMix64::new(seed);
    let bg = background(spec, &mut rng);
    let textures: Vec<Texture> = spec.sprites.iter().map(|s| sprite_texture(s.size, &mut rng)).collect();
    let paths: Vec<Vec<(i64, i64)>> = spec.sprites.iter().map(|s| trajectory(s, spec.frames)).collect();

    // admissible spawn ranges keep each sprite fully inside every frame
    let mut ranges = Vec::new();
    for (s, path) in spec.sprites.iter().zip(&paths) {
        let min_dx = path.iter().map(|p| p.0).min().unwrap();
        let max_dx = path.iter().map(|p| p.0).max().unwrap();
        let min_dy = path.iter().map(|p| p.1).min().unwrap();
        let max_dy = path.iter().map(|p| p.1).max().unwrap();
        let x_lo = -min_dx;
        let x_hi = spec.width as i64 - s.size as i64 - max_dx;
        let y_lo = -min_dy;
        let y_hi = spec.height as i64 - s.size as i64 - max_dy;
        if s.size == 0 || x_hi < x_lo || y_hi < y_lo {
            return Err(Error::config(format!(
                "sprite of size {} moving {} at {} px/frame does not fit a {}x{} frame for {} frames",
                s.size, s.motion, s.speed, spec.height, spec.width, spec.frames
            )));
        }
        ranges.push((x_lo, x_hi, y_lo, y_hi));
    }

    let mut spawns = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let candidate: Vec<(i64, i64)> = ranges
            .iter()
            .map(|&(xl, xh, yl, yh)| {
                (
                    xl + rng.below((xh - xl + 1) as u64) as i64,
                    yl + rng.below((yh - yl + 1) as u64) as i64,
                )
            })
            .collect();
        let clash = (0..spec.frames).any(|t| {
            (0..candidate.len()).any(|i| {
                (i + 1..candidate.len()).any(|j| {
                    let pi = (candidate[i].0 + paths[i][t].0, candidate[i].1 + paths[i][t].1);
                    let pj = (candidate[j].0 + paths[j][t].0, candidate[j].1 + paths[j][t].1);
                    overlaps(pi, spec.sprites[i].size, pj, spec.sprites[j].size)
                })
            })
        });
        if !clash {
            spawns = Some(candidate);
            break;
        }
    }
    let spawns = spawns.ok_or_else(|| {
        Error::config(format!(
            "could not place {} sprites without overlap after {PLACEMENT_ATTEMPTS} attempts",
            spec.sprites.len()
        ))
    })?;

    let classes = spec.classes.iter().map(|c| c.name().to_string()).collect();
    let mut ann = ActorAnnotations::empty(spec.frames, spec.sprites.len(), classes);
    ann.fps = spec.fps;
    let mut joints = Vec::with_capacity(spec.frames * spec.sprites.len() * NUM_JOINTS);
    let (h, w) = (spec.height, spec.width);
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame = bg.clone();
        for (n, tex) in textures.iter().enumerate() {
            let x0 = spawns[n].0 + paths[n][t].0;
            let y0 = spawns[n].1 + paths[n][t].1;
            let data = frame.data_mut();
            for y in 0..tex.size {
                for x in 0..tex.size {
                    let (py, px) = (y0 as usize + y, x0 as usize + x);
                    for c in 0..3 {
                        data[(c * h + py) * w + px] = tex.rgb[y * tex.size + x][c];
                    }
                }
            }
            let size = tex.size as f32;
            let b = Box2::new(x0 as f32, y0 as f32, x0 as f32 + size, y0 as f32 + size);
            ann.set_slot(t, n, b, labels[n]);
            for j in SKELETON {
                joints.push([
                    (x0 as f32 + j[0] * size) / w as f32,
                    (y0 as f32 + j[1] * size) / h as f32,
                ]);
            }
        }
        frames.push(frame);
    }
    if spec.keypoints {
        ann.set_keypoints(joints)?;
    }
    let seq = FrameSequence::new(frames, spec.fps, format!("synthetic-{seed}"))?;
    Ok((seq, ann))
}
