use super::{Layer, LayerSpec, Mode, Param, Real, Tensor};
use crate::error::Result;
use crate::rng::{derive_seed, SplitMix64};

/// Layers applied in order. Each layer gets its own seed derived from the
/// forward seed and its position.
pub struct Sequential<T: Real = f32> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(specs: impl IntoIterator<Item = LayerSpec>, rng: &mut SplitMix64) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|s| Layer::new(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(&x, mode, derive_seed(seed, i as u64))?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_context(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_context);
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    /// Parameters named `{prefix}.{layer}.{param}`.
    pub fn named_params<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (String, &'a Param<T>)> + 'a {
        self.layers
            .iter()
            .enumerate()
            .flat_map(move |(i, l)| l.params().iter().map(move |p| (format!("{prefix}.{i}.{}", p.name), p)))
    }

    pub fn named_params_mut<'a>(
        &'a mut self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (String, &'a mut Param<T>)> + 'a {
        self.layers.iter_mut().enumerate().flat_map(move |(i, l)| {
            l.params_mut()
                .iter_mut()
                .map(move |p| (format!("{prefix}.{i}.{}", p.name), p))
        })
    }
}
