//! Dense optical flow by coarse-to-fine Horn–Schunck.
//!
//! At every pyramid level the second frame is warped by the flow carried up
//! from the coarser level, brightness constancy is linearized around that
//! flow, and the quadratic energy
//!
//! ```text
//! E(u, v) = Σ_p (Ix·u + Iy·v + c)²  +  α² Σ_{p~q} w_pq ((u_p - u_q)² + (v_p - v_q)²)
//! ```
//!
//! is minimized by simultaneous (Jacobi) per-pixel updates. Neighbour
//! weights are 1/6 for the four edge neighbours and 1/12 for the diagonals;
//! pairs that would leave the image are dropped, which makes each Jacobi
//! sweep a block-Jacobi step on a positive-definite system and hence
//! energy non-increasing. Derivatives are central differences of the mean
//! of both frames with edge replication, so the estimator is exactly
//! equivariant under mirroring.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{area_resize, bilinear_clamped, Plane};
use crate::tensor::Tensor;

/// Smallest side accepted at the coarsest pyramid level.
pub const MIN_LEVEL_SIDE: usize = 4;
/// Smallest side accepted for input frames.
pub const MIN_FRAME_SIDE: usize = 8;

const EDGE_WEIGHT: f64 = 1.0 / 6.0;
const DIAGONAL_WEIGHT: f64 = 1.0 / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Smoothness weight, in intensity units of the `[0, 255]` scale.
    pub alpha: f64,
    /// Jacobi sweeps per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            iterations: 100,
            pyramid_levels: 3,
            pyramid_scale: 0.5,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("flow alpha must be positive"));
        }
        if self.iterations < 1 || self.pyramid_levels < 1 {
            return Err(Error::config("flow iterations and pyramid levels must be >= 1"));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::config("pyramid scale must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Side lengths of every level, finest first.
    fn level_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut dims = vec![(h, w)];
        for l in 1..self.pyramid_levels {
            let f = self.pyramid_scale.powi(l as i32);
            dims.push((
                ((h as f64 * f).round() as usize).max(1),
                ((w as f64 * f).round() as usize).max(1),
            ));
        }
        dims
    }
}

/// Per-pixel displacement in pixels per frame: `u` horizontal, `v` vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Plane::filled(height, width, 0.0),
            v: Plane::filled(height, width, 0.0),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn max_abs(&self) -> f32 {
        self.u.max_abs().max(self.v.max_abs())
    }

    pub fn magnitude(&self) -> Plane {
        flow_magnitude(self)
    }
}

/// Interpretation of pixel values when converting to luma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityRange {
    /// `[0, 255]`
    Byte,
    /// `[-1, 1]` (normalized frames)
    Signed,
}

impl IntensityRange {
    /// Frames with any negative value are taken as normalized.
    pub fn detect(frame: &Tensor<f32>) -> Self {
        if frame.data().iter().any(|&v| v < 0.0) {
            IntensityRange::Signed
        } else {
            IntensityRange::Byte
        }
    }
}

/// Rec. 601 luma `0.299 R + 0.587 G + 0.114 B` of a `3×H×W` frame, in
/// the same intensity scale as the input.
pub fn to_grayscale(frame: &Tensor<f32>) -> Result<Plane> {
    if frame.rank() != 3 || frame.dim(0) != 3 {
        return Err(Error::config(format!(
            "to_grayscale: expected 3xHxW frame, got shape {:?}",
            frame.shape()
        )));
    }
    let (h, w) = (frame.dim(1), frame.dim(2));
    let n = h * w;
    let d = frame.data();
    let luma = (0..n)
        .map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i])
        .collect();
    Plane::new(h, w, luma)
}

/// Luma rescaled to `[0, 255]`, the scale [`FlowParams::alpha`] refers to.
pub fn luma_for_flow(frame: &Tensor<f32>, range: IntensityRange) -> Result<Plane> {
    let g = to_grayscale(frame)?;
    Ok(match range {
        IntensityRange::Byte => g,
        IntensityRange::Signed => g.map(|v| (v + 1.0) * 127.5),
    })
}

/// Per-pixel `sqrt(u² + v²)`.
pub fn flow_magnitude(f: &FlowField) -> Plane {
    let (h, w) = f.dims();
    let data = f
        .u
        .data()
        .iter()
        .zip(f.v.data())
        .map(|(&u, &v)| (u * u + v * v).sqrt())
        .collect();
    Plane::new(h, w, data).expect("same dims")
}

/// Anything that turns two luma planes into a flow field.
pub trait FlowEstimator: Sync {
    fn estimate(&self, a: &Plane, b: &Plane) -> Result<FlowField>;
}

impl FlowEstimator for FlowParams {
    fn estimate(&self, a: &Plane, b: &Plane) -> Result<FlowField> {
        estimate_flow(a, b, self)
    }
}

pub fn estimate_flow(a: &Plane, b: &Plane, params: &FlowParams) -> Result<FlowField> {
    Ok(HornSchunck::new(a, b, params)?.run(false).0)
}

/// As [`estimate_flow`], also returning the energy before the first sweep
/// and after every sweep at the finest level.
pub fn estimate_flow_traced(a: &Plane, b: &Plane, params: &FlowParams) -> Result<(FlowField, Vec<f64>)> {
    Ok(HornSchunck::new(a, b, params)?.run(true))
}

struct HornSchunck<'p> {
    params: &'p FlowParams,
    /// (a, b, height, width), finest first
    levels: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

/// Linearized brightness-constancy terms at one level.
struct Linearization {
    ix: Vec<f64>,
    iy: Vec<f64>,
    /// residual offset so that the data term is `ix*u + iy*v + c`
    c: Vec<f64>,
}

impl<'p> HornSchunck<'p> {
    fn new(a: &Plane, b: &Plane, params: &'p FlowParams) -> Result<Self> {
        params.validate()?;
        if a.dims() != b.dims() {
            return Err(Error::config(format!(
                "estimate_flow: frame dims {:?} vs {:?}",
                a.dims(),
                b.dims()
            )));
        }
        let (h, w) = a.dims();
        if h < MIN_FRAME_SIDE || w < MIN_FRAME_SIDE {
            return Err(Error::config(format!(
                "estimate_flow: frames must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {h}x{w}"
            )));
        }
        if a.data().iter().chain(b.data()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("estimate_flow: non-finite pixel"));
        }
        let dims = params.level_dims(h, w);
        let &(ch, cw) = dims.last().unwrap();
        if ch < MIN_LEVEL_SIDE || cw < MIN_LEVEL_SIDE {
            return Err(Error::config(format!(
                "estimate_flow: coarsest pyramid level would be {ch}x{cw} (< {MIN_LEVEL_SIDE}); reduce pyramid_levels"
            )));
        }
        let a0: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
        let b0: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
        let mut levels = vec![(a0, b0, h, w)];
        for &(nh, nw) in &dims[1..] {
            let (pa, pb, ph, pw) = levels.last().unwrap();
            let na = area_resize(pa, *ph, *pw, nh, nw);
            let nb = area_resize(pb, *ph, *pw, nh, nw);
            levels.push((na, nb, nh, nw));
        }
        Ok(Self { params, levels })
    }

    fn run(&self, trace: bool) -> (FlowField, Vec<f64>) {
        let mut energies = Vec::new();
        let mut flow: Option<(Vec<f64>, Vec<f64>, usize, usize)> = None;
        for (li, (a, b, h, w)) in self.levels.iter().enumerate().rev() {
            let (h, w) = (*h, *w);
            let (mut u, mut v) = match flow.take() {
                None => (vec![0.0; h * w], vec![0.0; h * w]),
                Some((cu, cv, chh, cww)) => upsample_flow(&cu, &cv, chh, cww, h, w),
            };
            let lin = linearize(a, b, h, w, &u, &v);
            let record = trace && li == 0;
            if record {
                energies.push(self.energy(&lin, &u, &v, h, w));
            }
            let mut nu = vec![0.0; h * w];
            let mut nv = vec![0.0; h * w];
            for _ in 0..self.params.iterations {
                self.sweep(&lin, &u, &v, &mut nu, &mut nv, h, w);
                std::mem::swap(&mut u, &mut nu);
                std::mem::swap(&mut v, &mut nv);
                if record {
                    energies.push(self.energy(&lin, &u, &v, h, w));
                }
            }
            flow = Some((u, v, h, w));
        }
        let (u, v, h, w) = flow.expect("at least one level");
        let to_plane = |d: Vec<f64>| Plane::new(h, w, d.into_iter().map(|x| x as f32).collect()).unwrap();
        (
            FlowField {
                u: to_plane(u),
                v: to_plane(v),
            },
            energies,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn sweep(&self, lin: &Linearization, u: &[f64], v: &[f64], nu: &mut [f64], nv: &mut [f64], h: usize, w: usize) {
        let a2 = self.params.alpha * self.params.alpha;
        for y in 0..h {
            for x in 0..w {
                let (mut su, mut sv, mut d) = (0.0, 0.0, 0.0);
                for_each_neighbour(y, x, h, w, |q, wt| {
                    su += wt * u[q];
                    sv += wt * v[q];
                    d += wt;
                });
                let p = y * w + x;
                let (ub, vb) = (su / d, sv / d);
                let (ix, iy) = (lin.ix[p], lin.iy[p]);
                let q = (ix * ub + iy * vb + lin.c[p]) / (a2 * d + ix * ix + iy * iy);
                nu[p] = ub - ix * q;
                nv[p] = vb - iy * q;
            }
        }
    }

    fn energy(&self, lin: &Linearization, u: &[f64], v: &[f64], h: usize, w: usize) -> f64 {
        let a2 = self.params.alpha * self.params.alpha;
        let mut data = 0.0;
        let mut smooth = 0.0;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let r = lin.ix[p] * u[p] + lin.iy[p] * v[p] + lin.c[p];
                data += r * r;
                for_each_neighbour(y, x, h, w, |q, wt| {
                    // each unordered pair is visited twice
                    let du = u[p] - u[q];
                    let dv = v[p] - v[q];
                    smooth += 0.5 * wt * (du * du + dv * dv);
                });
            }
        }
        data + a2 * smooth
    }
}

#[inline]
fn for_each_neighbour(y: usize, x: usize, h: usize, w: usize, mut f: impl FnMut(usize, f64)) {
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let ny = y as isize + dy;
            let nx = x as isize + dx;
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let wt = if dy == 0 || dx == 0 { EDGE_WEIGHT } else { DIAGONAL_WEIGHT };
            f(ny as usize * w + nx as usize, wt);
        }
    }
}

fn linearize(a: &[f64], b: &[f64], h: usize, w: usize, u0: &[f64], v0: &[f64]) -> Linearization {
    let mut warped = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            warped[p] = if u0[p] == 0.0 && v0[p] == 0.0 {
                b[p]
            } else {
                bilinear_clamped(b, h, w, y as f64 + v0[p], x as f64 + u0[p])
            };
        }
    }
    let mean: Vec<f64> = a.iter().zip(&warped).map(|(p, q)| 0.5 * (p + q)).collect();
    let at = |y: usize, x: usize| mean[y * w + x];
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    let mut c = vec![0.0; h * w];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let p = y * w + x;
            ix[p] = 0.5 * (at(y, xp) - at(y, xm));
            iy[p] = 0.5 * (at(yp, x) - at(ym, x));
            let it = warped[p] - a[p];
            c[p] = it - ix[p] * u0[p] - iy[p] * v0[p];
        }
    }
    Linearization { ix, iy, c }
}

fn upsample_flow(u: &[f64], v: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> (Vec<f64>, Vec<f64>) {
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    let mut nu = vec![0.0; nh * nw];
    let mut nv = vec![0.0; nh * nw];
    for y in 0..nh {
        let cy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..nw {
            let cx = (x as f64 + 0.5) * sx - 0.5;
            nu[y * nw + x] = bilinear_clamped(u, h, w, cy, cx) / sx;
            nv[y * nw + x] = bilinear_clamped(v, h, w, cy, cx) / sy;
        }
    }
    (nu, nv)
}

const FLOW_MAGIC: &[u8; 7] = b"SWTAFLO";

/// Write a flow field: magic `SWTAFLO`, `u32` H, `u32` W (little endian),
/// then `H*W` LE `f32` u-values followed by the v-values.
pub fn write_flow<W: Write>(mut w: W, flow: &FlowField) -> std::io::Result<()> {
    let (h, wd) = flow.dims();
    w.write_all(FLOW_MAGIC)?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wd as u32).to_le_bytes())?;
    for v in flow.u.data().iter().chain(flow.v.data()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_flow<R: Read>(mut r: R) -> Result<FlowField> {
    let bad = |e: std::io::Error| Error::ingestion(format!("truncated flow file: {e}"));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != FLOW_MAGIC {
        return Err(Error::ingestion("not a SWTAFLO flow file"));
    }
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim).map_err(bad)?;
    let h = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim).map_err(bad)?;
    let w = u32::from_le_bytes(dim) as usize;
    let mut raw = vec![0u8; 2 * h * w * 4];
    r.read_exact(&mut raw).map_err(bad)?;
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (u, v) = vals.split_at(h * w);
    Ok(FlowField {
        u: Plane::new(h, w, u.to_vec())?,
        v: Plane::new(h, w, v.to_vec())?,
    })
}

pub fn save_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_flow(BufWriter::new(f), flow).map_err(|e| Error::io(path, e))
}

pub fn load_flow(path: &Path) -> Result<FlowField> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_flow(BufReader::new(f))
}
