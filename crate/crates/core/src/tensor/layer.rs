use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeom};
use super::lstm::{self, LstmContext};
use super::norm::{self, NormContext};
use super::{check_axes, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Train mode draws dropout masks and uses batch statistics; eval mode
/// makes dropout the identity and normalizes with running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Kind and hyperparameters of one layer.
///
/// Layouts: `conv2d` takes `N×C×H×W`, `conv1d` takes `N×C×L`, `dense`
/// applies to the last axis, `batch_norm` normalizes axis 1, `softmax`
/// works along the last axis, `max_pool_time` reduces axis 1 and `lstm`
/// maps `B×L×I` to all hidden states `B×L×H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Padding is chosen so that the output side is `floor(side / stride)`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Stride 1, odd kernel, length-preserving zero padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm {
        features: usize,
    },
    Dropout {
        ratio: f64,
    },
    Relu,
    Sigmoid,
    Softmax,
    MaxPoolTime,
    Lstm {
        input_size: usize,
        hidden_size: usize,
    },
}

pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                positive("conv2d in_channels", in_channels)?;
                positive("conv2d out_channels", out_channels)?;
                positive("conv2d kernel", kernel)?;
                positive("conv2d stride", stride)
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                positive("conv1d in_channels", in_channels)?;
                positive("conv1d out_channels", out_channels)?;
                positive("conv1d kernel", kernel)?;
                if kernel % 2 == 0 {
                    return Err(Error::config("conv1d kernel must be odd"));
                }
                Ok(())
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                positive("dense in_features", in_features)?;
                positive("dense out_features", out_features)
            }
            LayerSpec::BatchNorm { features } => positive("batch_norm features", features),
            LayerSpec::Dropout { ratio } => {
                if (0.0..1.0).contains(&ratio) {
                    Ok(())
                } else {
                    Err(Error::config(format!("dropout ratio {ratio} outside [0, 1)")))
                }
            }
            LayerSpec::Lstm {
                input_size,
                hidden_size,
            } => {
                positive("lstm input_size", input_size)?;
                positive("lstm hidden_size", hidden_size)
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax | LayerSpec::MaxPoolTime => {
                Ok(())
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::MaxPoolTime => "max_pool_time",
            LayerSpec::Lstm { .. } => "lstm",
        }
    }
}

/// A named tensor owned by a layer. Non-trainable entries (batch-norm
/// running statistics) are persisted but never updated by the optimizer.
#[derive(Debug, Clone)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    fn new(name: &str, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.to_string(),
            value,
            grad,
            trainable,
        }
    }
}

enum Context<T: Real> {
    Conv { input: Tensor<T>, geom: ConvGeom },
    Dense { input: Tensor<T> },
    Norm(NormContext<T>),
    Dropout { mask: Vec<T> },
    Relu { input: Tensor<T> },
    Sigmoid { output: Tensor<T> },
    Softmax { output: Tensor<T> },
    MaxPoolTime { argmax: Vec<usize>, input_shape: Vec<usize> },
    Lstm(LstmContext<T>),
}

/// One layer: its spec, parameters, and the context saved by the most
/// recent forward pass.
pub struct Layer<T: Real = f32> {
    spec: LayerSpec,
    params: Vec<Param<T>>,
    ctx: Option<Context<T>>,
}

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, rng: &mut SplitMix64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.uniform(-bound, bound)))
}

impl<T: Real> Layer<T> {
    /// Build a layer with freshly initialized parameters: Kaiming-uniform
    /// (fan-in) weights and zero biases for conv/dense, `±1/sqrt(hidden)`
    /// for the LSTM, unit gain and zero shift for batch norm.
    pub fn new(spec: LayerSpec, rng: &mut SplitMix64) -> Result<Self> {
        spec.validate()?;
        let params = match spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                let bound = (6.0 / fan_in as f64).sqrt();
                vec![
                    Param::new(
                        "weight",
                        uniform_tensor(&[out_channels, in_channels, kernel, kernel], bound, rng),
                        true,
                    ),
                    Param::new("bias", Tensor::zeros(&[out_channels]), true),
                ]
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let bound = (6.0 / (in_channels * kernel) as f64).sqrt();
                vec![
                    Param::new(
                        "weight",
                        uniform_tensor(&[out_channels, in_channels, kernel], bound, rng),
                        true,
                    ),
                    Param::new("bias", Tensor::zeros(&[out_channels]), true),
                ]
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let bound = (6.0 / in_features as f64).sqrt();
                vec![
                    Param::new(
                        "weight",
                        uniform_tensor(&[out_features, in_features], bound, rng),
                        true,
                    ),
                    Param::new("bias", Tensor::zeros(&[out_features]), true),
                ]
            }
            LayerSpec::BatchNorm { features } => vec![
                Param::new("gain", Tensor::full(&[features], T::one()), true),
                Param::new("shift", Tensor::zeros(&[features]), true),
                Param::new("running_mean", Tensor::zeros(&[features]), false),
                Param::new("running_var", Tensor::full(&[features], T::one()), false),
            ],
            LayerSpec::Lstm {
                input_size,
                hidden_size,
            } => {
                let bound = 1.0 / (hidden_size as f64).sqrt();
                vec![
                    Param::new(
                        "w_ih",
                        uniform_tensor(&[4 * hidden_size, input_size], bound, rng),
                        true,
                    ),
                    Param::new(
                        "w_hh",
                        uniform_tensor(&[4 * hidden_size, hidden_size], bound, rng),
                        true,
                    ),
                    Param::new("bias", uniform_tensor(&[4 * hidden_size], bound, rng), true),
                ]
            }
            LayerSpec::Dropout { .. }
            | LayerSpec::Relu
            | LayerSpec::Sigmoid
            | LayerSpec::Softmax
            | LayerSpec::MaxPoolTime => Vec::new(),
        };
        Ok(Self {
            spec,
            params,
            ctx: None,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Drop the saved forward context.
    pub fn clear_context(&mut self) {
        self.ctx = None;
    }

    /// Run the layer. `seed` only drives dropout masks.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        input.ensure_finite(&format!("{} input", self.spec.kind()))?;
        let (out, ctx) = match self.spec.clone() {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                check_axes("conv2d", input.shape(), &[None, Some(in_channels), None, None])?;
                let geom = ConvGeom::floor_same(
                    in_channels,
                    out_channels,
                    (input.dim(2), input.dim(3)),
                    (kernel, kernel),
                    (stride, stride),
                )?;
                let out = conv::forward(input, &self.params[0].value, &self.params[1].value, &geom);
                (
                    out,
                    Context::Conv {
                        input: input.clone(),
                        geom,
                    },
                )
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                check_axes("conv1d", input.shape(), &[None, Some(in_channels), None])?;
                let geom = ConvGeom::same_1d(in_channels, out_channels, input.dim(2), kernel)?;
                let (n, c, l) = (input.dim(0), in_channels, input.dim(2));
                let as2d = input.clone().reshape(&[n, c, 1, l])?;
                let w = self.params[0].value.clone().reshape(&[out_channels, c, 1, kernel])?;
                let out = conv::forward(&as2d, &w, &self.params[1].value, &geom)
                    .reshape(&[n, out_channels, l])?;
                (out, Context::Conv { input: as2d, geom })
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let rank = input.rank();
                if rank == 0 || input.dim(rank - 1) != in_features {
                    return Err(Error::config(format!(
                        "dense: last axis has size {}, expected {in_features} (shape {:?})",
                        input.shape().last().copied().unwrap_or(0),
                        input.shape()
                    )));
                }
                let rows = input.len() / in_features;
                let mut shape = input.shape().to_vec();
                shape[rank - 1] = out_features;
                let mut out = vec![T::zero(); rows * out_features];
                let bias = self.params[1].value.data();
                for r in 0..rows {
                    out[r * out_features..(r + 1) * out_features].copy_from_slice(bias);
                }
                T::gemm(
                    rows,
                    in_features,
                    out_features,
                    T::one(),
                    (input.data(), in_features as isize, 1),
                    (self.params[0].value.data(), 1, in_features as isize),
                    T::one(),
                    (&mut out, out_features as isize, 1),
                );
                (
                    Tensor::from_vec(&shape, out)?,
                    Context::Dense {
                        input: input.clone(),
                    },
                )
            }
            LayerSpec::BatchNorm { features } => {
                if input.rank() < 2 || input.dim(1) != features {
                    return Err(Error::config(format!(
                        "batch_norm: axis 1 must have size {features} (shape {:?})",
                        input.shape()
                    )));
                }
                let (out, ctx) = norm::forward(input, &mut self.params, mode);
                (out, Context::Norm(ctx))
            }
            LayerSpec::Dropout { ratio } => {
                let mask: Vec<T> = match mode {
                    Mode::Eval => vec![T::one(); input.len()],
                    Mode::Train => {
                        let mut rng = SplitMix64::new(seed);
                        let keep = T::of(1.0 / (1.0 - ratio));
                        (0..input.len())
                            .map(|_| {
                                if rng.next_f64() < ratio {
                                    T::zero()
                                } else {
                                    keep
                                }
                            })
                            .collect()
                    }
                };
                let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
                (Tensor::from_vec(input.shape(), data)?, Context::Dropout { mask })
            }
            LayerSpec::Relu => (
                input.map(|x| if x > T::zero() { x } else { T::zero() }),
                Context::Relu {
                    input: input.clone(),
                },
            ),
            LayerSpec::Sigmoid => {
                let out = input.map(sigmoid);
                (out.clone(), Context::Sigmoid { output: out })
            }
            LayerSpec::Softmax => {
                let out = softmax_last_axis(input)?;
                (out.clone(), Context::Softmax { output: out })
            }
            LayerSpec::MaxPoolTime => {
                if input.rank() < 2 || input.dim(1) == 0 {
                    return Err(Error::config(format!(
                        "max_pool_time: needs a non-empty axis 1 (shape {:?})",
                        input.shape()
                    )));
                }
                let (b, t) = (input.dim(0), input.dim(1));
                let inner = input.len() / (b * t);
                let mut out = vec![T::zero(); b * inner];
                let mut argmax = vec![0usize; b * inner];
                let x = input.data();
                for bi in 0..b {
                    for j in 0..inner {
                        let mut best = x[bi * t * inner + j];
                        let mut best_t = 0;
                        for ti in 1..t {
                            let v = x[(bi * t + ti) * inner + j];
                            if v > best {
                                best = v;
                                best_t = ti;
                            }
                        }
                        out[bi * inner + j] = best;
                        argmax[bi * inner + j] = best_t;
                    }
                }
                let mut shape = input.shape().to_vec();
                shape.remove(1);
                (
                    Tensor::from_vec(&shape, out)?,
                    Context::MaxPoolTime {
                        argmax,
                        input_shape: input.shape().to_vec(),
                    },
                )
            }
            LayerSpec::Lstm {
                input_size,
                hidden_size,
            } => {
                check_axes("lstm", input.shape(), &[None, None, Some(input_size)])?;
                let (out, ctx) = lstm::forward(input, &self.params, hidden_size);
                (out, Context::Lstm(ctx))
            }
        };
        out.ensure_finite(&format!("{} output", self.spec.kind()))?;
        self.ctx = Some(ctx);
        Ok(out)
    }

    /// Propagate `upstream` (gradient w.r.t. this layer's output) through the
    /// saved forward context. Parameter gradients are accumulated into each
    /// [`Param::grad`]; the gradient w.r.t. the input is returned.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.as_ref().ok_or_else(|| {
            Error::usage(format!(
                "{} backward called without a saved forward context",
                self.spec.kind()
            ))
        })?;
        upstream.ensure_finite(&format!("{} upstream gradient", self.spec.kind()))?;
        let grad = match (ctx, &self.spec) {
            (Context::Conv { input, geom }, LayerSpec::Conv2d { .. }) => {
                expect_shape("conv2d", upstream, &geom.output_shape(input.dim(0)))?;
                let (dx, dw, db) = conv::backward(input, &self.params[0].value, upstream, geom);
                accumulate(&mut self.params[0].grad, dw.data());
                accumulate(&mut self.params[1].grad, db.data());
                dx
            }
            (Context::Conv { input, geom }, LayerSpec::Conv1d { kernel, .. }) => {
                let n = input.dim(0);
                let up2d = upstream
                    .clone()
                    .reshape(&[n, geom.out_channels, 1, geom.out_w])?;
                expect_shape("conv1d", &up2d, &geom.output_shape(n))?;
                let w = self.params[0]
                    .value
                    .clone()
                    .reshape(&[geom.out_channels, geom.in_channels, 1, *kernel])?;
                let (dx, dw, db) = conv::backward(input, &w, &up2d, geom);
                accumulate(&mut self.params[0].grad, dw.data());
                accumulate(&mut self.params[1].grad, db.data());
                dx.reshape(&[n, geom.in_channels, geom.in_w])?
            }
            (
                Context::Dense { input },
                LayerSpec::Dense {
                    in_features,
                    out_features,
                },
            ) => {
                let (fin, fout) = (*in_features, *out_features);
                let mut out_shape = input.shape().to_vec();
                *out_shape.last_mut().unwrap() = fout;
                expect_shape("dense", upstream, &out_shape)?;
                let rows = input.len() / fin;
                let mut dx = vec![T::zero(); rows * fin];
                T::gemm(
                    rows,
                    fout,
                    fin,
                    T::one(),
                    (upstream.data(), fout as isize, 1),
                    (self.params[0].value.data(), fin as isize, 1),
                    T::zero(),
                    (&mut dx, fin as isize, 1),
                );
                T::gemm(
                    fout,
                    rows,
                    fin,
                    T::one(),
                    (upstream.data(), 1, fout as isize),
                    (input.data(), fin as isize, 1),
                    T::one(),
                    (self.params[0].grad.data_mut(), fin as isize, 1),
                );
                let db = self.params[1].grad.data_mut();
                for r in 0..rows {
                    for (o, g) in db.iter_mut().enumerate() {
                        *g = *g + upstream.data()[r * fout + o];
                    }
                }
                Tensor::from_vec(input.shape(), dx)?
            }
            (Context::Norm(nctx), LayerSpec::BatchNorm { .. }) => {
                expect_shape("batch_norm", upstream, &nctx.shape)?;
                norm::backward(nctx, &mut self.params, upstream)
            }
            (Context::Dropout { mask }, _) => {
                if upstream.len() != mask.len() {
                    return Err(Error::config("dropout: upstream gradient size mismatch"));
                }
                let data = upstream.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(upstream.shape(), data)?
            }
            (Context::Relu { input }, _) => {
                expect_shape("relu", upstream, input.shape())?;
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                Tensor::from_vec(input.shape(), data)?
            }
            (Context::Sigmoid { output }, _) => {
                expect_shape("sigmoid", upstream, output.shape())?;
                let data = output
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                Tensor::from_vec(output.shape(), data)?
            }
            (Context::Softmax { output }, _) => {
                expect_shape("softmax", upstream, output.shape())?;
                softmax_backward(output, upstream)
            }
            (
                Context::MaxPoolTime {
                    argmax,
                    input_shape,
                },
                _,
            ) => {
                let mut pooled = input_shape.clone();
                pooled.remove(1);
                expect_shape("max_pool_time", upstream, &pooled)?;
                let (b, t) = (input_shape[0], input_shape[1]);
                let inner = argmax.len() / b.max(1);
                let mut dx = Tensor::zeros(input_shape);
                for bi in 0..b {
                    for j in 0..inner {
                        let ti = argmax[bi * inner + j];
                        dx.data_mut()[(bi * t + ti) * inner + j] = upstream.data()[bi * inner + j];
                    }
                }
                dx
            }
            (Context::Lstm(lctx), LayerSpec::Lstm { hidden_size, .. }) => {
                expect_shape(
                    "lstm",
                    upstream,
                    &[lctx.batch, lctx.steps, *hidden_size],
                )?;
                lstm::backward(lctx, &mut self.params, upstream)
            }
            _ => return Err(Error::usage("saved context does not match the layer kind")),
        };
        Ok(grad)
    }
}

fn expect_shape<T: Real>(what: &str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    let expected: Vec<Option<usize>> = shape.iter().map(|&d| Some(d)).collect();
    check_axes(&format!("{what} upstream gradient"), t.shape(), &expected)
}

fn accumulate<T: Real>(dst: &mut Tensor<T>, src: &[T]) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax along the last axis.
pub fn softmax_last_axis<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *input
        .shape()
        .last()
        .ok_or_else(|| Error::config("softmax: scalar input"))?;
    let mut out = input.clone();
    if n == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

fn softmax_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let n = *output.shape().last().unwrap();
    let mut dx = upstream.clone();
    if n == 0 {
        return dx;
    }
    for (dxr, yr) in dx.data_mut().chunks_mut(n).zip(output.data().chunks(n)) {
        let dot: T = dxr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
        for (g, &y) in dxr.iter_mut().zip(yr) {
            *g = y * (*g - dot);
        }
    }
    dx
}
