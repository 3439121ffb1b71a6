//! im2col convolution shared by `conv2d` and `conv1d` (a 1×L image).

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Leading padding `(k-1)/2` and trailing padding `k - s - lead` (at least
/// zero): the output side is then `floor(side / stride)` for `k >= s`.
fn floor_same_axis(side: usize, k: usize, s: usize) -> (usize, usize) {
    let lead = (k - 1) / 2;
    let trail = (k as isize - s as isize - lead as isize).max(0) as usize;
    let padded = side + lead + trail;
    let out = if padded >= k { (padded - k) / s + 1 } else { 0 };
    (lead, out)
}

impl ConvGeom {
    pub fn floor_same(
        in_channels: usize,
        out_channels: usize,
        (in_h, in_w): (usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
    ) -> Result<Self> {
        let (pad_top, out_h) = floor_same_axis(in_h, kh, sh);
        let (pad_left, out_w) = floor_same_axis(in_w, kw, sw);
        if out_h == 0 || out_w == 0 {
            return Err(Error::config(format!(
                "conv2d: input {in_h}x{in_w} too small for kernel {kh}x{kw} stride {sh}x{sw}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            in_h,
            in_w,
            kh,
            kw,
            sh,
            sw,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn same_1d(in_channels: usize, out_channels: usize, len: usize, k: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::config("conv1d: axis 2 (length) is empty"));
        }
        Ok(Self {
            in_channels,
            out_channels,
            in_h: 1,
            in_w: len,
            kh: 1,
            kw: k,
            sh: 1,
            sw: 1,
            pad_top: 0,
            pad_left: k / 2,
            out_h: 1,
            out_w: len,
        })
    }

    pub fn output_shape(&self, n: usize) -> [usize; 4] {
        [n, self.out_channels, self.out_h, self.out_w]
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        // f(col_row * positions + position, input offset within item, _)
        let p = self.positions();
        for c in 0..self.in_channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.sh + ki) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.sw + kj) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            let src = (c * self.in_h + iy as usize) * self.in_w + ix as usize;
                            f(row * p + oy * self.out_w + ox, src, row);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut col = vec![T::zero(); self.patch() * self.positions()];
        self.for_each_tap(|dst, src, _| col[dst] = x[src]);
        col
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        self.for_each_tap(|c, dst, _| dx[dst] = dx[dst] + col[c]);
    }
}

pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = input.dim(0);
    let item_in = g.in_channels * g.in_h * g.in_w;
    let (p, ck, o) = (g.positions(), g.patch(), g.out_channels);
    let mut out = Tensor::zeros(&g.output_shape(n));
    out.data_mut()
        .par_chunks_mut(o * p)
        .zip(input.data().par_chunks(item_in))
        .for_each(|(y, x)| {
            let col = g.im2col(x);
            for (oc, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = bias.data()[oc]);
            }
            T::gemm(
                o,
                ck,
                p,
                T::one(),
                (weight.data(), ck as isize, 1),
                (&col, p as isize, 1),
                T::one(),
                (y, p as isize, 1),
            );
        });
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    g: &ConvGeom,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let item_in = g.in_channels * g.in_h * g.in_w;
    let (p, ck, o) = (g.positions(), g.patch(), g.out_channels);
    let mut dx = Tensor::zeros(input.shape());
    // Per-item weight/bias gradients are reduced afterwards in item order so
    // the result does not depend on thread scheduling.
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .data_mut()
        .par_chunks_mut(item_in)
        .zip(input.data().par_chunks(item_in))
        .zip(upstream.data().par_chunks(o * p))
        .map(|((dxi, x), dy)| {
            let col = g.im2col(x);
            let mut dw = vec![T::zero(); o * ck];
            T::gemm(
                o,
                p,
                ck,
                T::one(),
                (dy, p as isize, 1),
                (&col, 1, p as isize),
                T::zero(),
                (&mut dw, ck as isize, 1),
            );
            let db: Vec<T> = dy.chunks(p).map(|r| r.iter().copied().sum()).collect();
            let mut dcol = vec![T::zero(); ck * p];
            T::gemm(
                ck,
                o,
                p,
                T::one(),
                (weight.data(), 1, ck as isize),
                (dy, p as isize, 1),
                T::zero(),
                (&mut dcol, p as isize, 1),
            );
            g.col2im(&dcol, dxi);
            (dw, db)
        })
        .collect();
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[o]);
    for (pw, pb) in partials {
        for (a, b) in dw.data_mut().iter_mut().zip(pw) {
            *a = *a + b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(pb) {
            *a = *a + b;
        }
    }
    (dx, dw, db)
}
