use super::layer::{Mode, Param, BN_EPS, BN_MOMENTUM};
use super::{Real, Tensor};

pub(crate) struct NormContext<T: Real> {
    pub shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner = shape[2..].iter().product();
    (n, c, inner)
}

/// params: gain, shift, running_mean, running_var
pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    params: &mut [Param<T>],
    mode: Mode,
) -> (Tensor<T>, NormContext<T>) {
    let (n, c, inner) = layout(input.shape());
    let x = input.data();
    let count = n * inner;
    let eps = T::of(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    let base = (b * c + ch) * inner;
                    s = s + x[base..base + inner].iter().copied().sum::<T>();
                }
                let m = s / T::of(count as f64);
                let mut v = T::zero();
                for b in 0..n {
                    let base = (b * c + ch) * inner;
                    for &xi in &x[base..base + inner] {
                        v = v + (xi - m) * (xi - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / T::of(count as f64);
            }
            let momentum = T::of(BN_MOMENTUM);
            let unbias = if count > 1 {
                T::of(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            let (head, tail) = params.split_at_mut(3);
            let rm = head[2].value.data_mut();
            let rv = tail[0].value.data_mut();
            for ch in 0..c {
                rm[ch] = (T::one() - momentum) * rm[ch] + momentum * mean[ch];
                rv[ch] = (T::one() - momentum) * rv[ch] + momentum * var[ch] * unbias;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(params[2].value.data());
            var.copy_from_slice(params[3].value.data());
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gain = params[0].value.data();
    let shift = params[1].value.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                out[i] = gain[ch] * xhat[i] + shift[ch];
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), out).expect("same shape"),
        NormContext {
            shape: input.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        },
    )
}

pub(crate) fn backward<T: Real>(
    ctx: &NormContext<T>,
    params: &mut [Param<T>],
    upstream: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, inner) = layout(&ctx.shape);
    let dy = upstream.data();
    let count = T::of((n * inner) as f64);
    let mut dgain = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                dgain[ch] = dgain[ch] + dy[i] * ctx.xhat[i];
                dshift[ch] = dshift[ch] + dy[i];
            }
        }
    }
    let gain = params[0].value.data().to_vec();
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                dx[i] = match ctx.mode {
                    Mode::Eval => dy[i] * gain[ch] * ctx.inv_std[ch],
                    // dgain = sum(dy * xhat), dshift = sum(dy)
                    Mode::Train => {
                        gain[ch] * ctx.inv_std[ch] / count
                            * (count * dy[i] - dshift[ch] - ctx.xhat[i] * dgain[ch])
                    }
                };
            }
        }
    }
    for (g, d) in params[0].grad.data_mut().iter_mut().zip(&dgain) {
        *g = *g + *d;
    }
    for (g, d) in params[1].grad.data_mut().iter_mut().zip(&dshift) {
        *g = *g + *d;
    }
    Tensor::from_vec(&ctx.shape, dx).expect("same shape")
}
