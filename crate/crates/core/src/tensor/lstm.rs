//! Single-layer LSTM over `B×L×I`, gate order (input, forget, cell, output).

use super::layer::{sigmoid, Param};
use super::{Real, Tensor};

pub(crate) struct LstmContext<T: Real> {
    pub batch: usize,
    pub steps: usize,
    input: Tensor<T>,
    /// Activated gates per (b, t): [i, f, g, o] each of width H.
    gates: Vec<T>,
    /// Cell state per (b, t).
    cells: Vec<T>,
    /// Hidden state per (b, t).
    hidden: Vec<T>,
}

/// params: w_ih (4H×I), w_hh (4H×H), bias (4H)
pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    params: &[Param<T>],
    h: usize,
) -> (Tensor<T>, LstmContext<T>) {
    let (b, l, ni) = (input.dim(0), input.dim(1), input.dim(2));
    let w_ih = params[0].value.data();
    let w_hh = params[1].value.data();
    let bias = params[2].value.data();
    let x = input.data();
    let mut gates = vec![T::zero(); b * l * 4 * h];
    let mut cells = vec![T::zero(); b * l * h];
    let mut hidden = vec![T::zero(); b * l * h];
    let mut z = vec![T::zero(); 4 * h];
    for bi in 0..b {
        for t in 0..l {
            let xt = &x[(bi * l + t) * ni..(bi * l + t + 1) * ni];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut s = bias[r];
                let wr = &w_ih[r * ni..(r + 1) * ni];
                for k in 0..ni {
                    s = s + wr[k] * xt[k];
                }
                if t > 0 {
                    let hp = &hidden[(bi * l + t - 1) * h..(bi * l + t) * h];
                    let wr = &w_hh[r * h..(r + 1) * h];
                    for k in 0..h {
                        s = s + wr[k] * hp[k];
                    }
                }
                *zr = s;
            }
            let gbase = (bi * l + t) * 4 * h;
            let sbase = (bi * l + t) * h;
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let g_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                gates[gbase + j] = i_g;
                gates[gbase + h + j] = f_g;
                gates[gbase + 2 * h + j] = g_g;
                gates[gbase + 3 * h + j] = o_g;
                let c_prev = if t > 0 { cells[sbase - h + j] } else { T::zero() };
                let c = f_g * c_prev + i_g * g_g;
                cells[sbase + j] = c;
                hidden[sbase + j] = o_g * c.tanh();
            }
        }
    }
    let out = Tensor::from_vec(&[b, l, h], hidden.clone()).expect("shape");
    (
        out,
        LstmContext {
            batch: b,
            steps: l,
            input: input.clone(),
            gates,
            cells,
            hidden,
        },
    )
}

pub(crate) fn backward<T: Real>(
    ctx: &LstmContext<T>,
    params: &mut [Param<T>],
    upstream: &Tensor<T>,
) -> Tensor<T> {
    let (b, l) = (ctx.batch, ctx.steps);
    let ni = ctx.input.dim(2);
    let h = params[1].value.dim(1);
    let w_ih = params[0].value.data().to_vec();
    let w_hh = params[1].value.data().to_vec();
    let x = ctx.input.data();
    let dy = upstream.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dw_ih = vec![T::zero(); w_ih.len()];
    let mut dw_hh = vec![T::zero(); w_hh.len()];
    let mut dbias = vec![T::zero(); 4 * h];
    let mut dz = vec![T::zero(); 4 * h];
    for bi in 0..b {
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        for t in (0..l).rev() {
            let gbase = (bi * l + t) * 4 * h;
            let sbase = (bi * l + t) * h;
            for j in 0..h {
                let i_g = ctx.gates[gbase + j];
                let f_g = ctx.gates[gbase + h + j];
                let g_g = ctx.gates[gbase + 2 * h + j];
                let o_g = ctx.gates[gbase + 3 * h + j];
                let c = ctx.cells[sbase + j];
                let c_prev = if t > 0 { ctx.cells[sbase - h + j] } else { T::zero() };
                let tc = c.tanh();
                let dh = dy[sbase + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (T::one() - tc * tc) + dc_next[j];
                let d_i = dc * g_g;
                let d_f = dc * c_prev;
                let d_g = dc * i_g;
                dc_next[j] = dc * f_g;
                dz[j] = d_i * i_g * (T::one() - i_g);
                dz[h + j] = d_f * f_g * (T::one() - f_g);
                dz[2 * h + j] = d_g * (T::one() - g_g * g_g);
                dz[3 * h + j] = d_o * o_g * (T::one() - o_g);
            }
            let xt = &x[(bi * l + t) * ni..(bi * l + t + 1) * ni];
            let dxt = &mut dx[(bi * l + t) * ni..(bi * l + t + 1) * ni];
            for r in 0..4 * h {
                let d = dz[r];
                dbias[r] = dbias[r] + d;
                for k in 0..ni {
                    dw_ih[r * ni + k] = dw_ih[r * ni + k] + d * xt[k];
                    dxt[k] = dxt[k] + w_ih[r * ni + k] * d;
                }
            }
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            if t > 0 {
                let hp = &ctx.hidden[(bi * l + t - 1) * h..(bi * l + t) * h];
                for r in 0..4 * h {
                    let d = dz[r];
                    for k in 0..h {
                        dw_hh[r * h + k] = dw_hh[r * h + k] + d * hp[k];
                        dh_next[k] = dh_next[k] + w_hh[r * h + k] * d;
                    }
                }
            }
        }
    }
    for (p, d) in params.iter_mut().zip([dw_ih, dw_hh, dbias]) {
        for (g, v) in p.grad.data_mut().iter_mut().zip(d) {
            *g = *g + v;
        }
    }
    Tensor::from_vec(ctx.input.shape(), dx).expect("shape")
}
