use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Result of [`temporal_maxpool`]: pooled values plus the winning time step
/// for each `(b, n, class)`, `None` where the actor is absent throughout.
#[derive(Debug, Clone)]
pub struct PooledLogits<T: Real = f32> {
    pub values: Tensor<T>,
    pub argmax: Vec<Option<usize>>,
    /// Per `(b, n)`: present in at least one frame.
    pub actor_present: Vec<bool>,
    input_shape: Vec<usize>,
}

/// Elementwise max over the time axis of `B×T×N×C` logits, considering only
/// slots marked present. Ties go to the earliest frame; actors absent in
/// every frame pool to zero.
pub fn temporal_maxpool<T: Real>(logits: &Tensor<T>, presence: &[bool]) -> Result<PooledLogits<T>> {
    if logits.rank() != 4 {
        return Err(Error::config(format!(
            "temporal_maxpool: logits must be BxTxNxC, got {:?}",
            logits.shape()
        )));
    }
    let (b, t, n, c) = (logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3));
    if t == 0 {
        return Err(Error::config("temporal_maxpool: time axis is empty"));
    }
    if presence.len() != b * t * n {
        return Err(Error::config(format!(
            "temporal_maxpool: {} presence flags for {b}x{t}x{n} slots",
            presence.len()
        )));
    }
    let x = logits.data();
    let mut values = vec![T::zero(); b * n * c];
    let mut argmax = vec![None; b * n * c];
    let mut actor_present = vec![false; b * n];
    for bi in 0..b {
        for ni in 0..n {
            for ti in 0..t {
                if !presence[(bi * t + ti) * n + ni] {
                    continue;
                }
                actor_present[bi * n + ni] = true;
                for ci in 0..c {
                    let v = x[((bi * t + ti) * n + ni) * c + ci];
                    let o = (bi * n + ni) * c + ci;
                    if argmax[o].is_none() || v > values[o] {
                        values[o] = v;
                        argmax[o] = Some(ti);
                    }
                }
            }
        }
    }
    Ok(PooledLogits {
        values: Tensor::from_vec(&[b, n, c], values)?,
        argmax,
        actor_present,
        input_shape: logits.shape().to_vec(),
    })
}

impl<T: Real> PooledLogits<T> {
    /// Route `upstream` (`B×N×C`) back to the winning time steps.
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if upstream.shape() != self.values.shape() {
            return Err(Error::config(format!(
                "temporal_maxpool backward: upstream {:?}, expected {:?}",
                upstream.shape(),
                self.values.shape()
            )));
        }
        let (t, n, c) = (self.input_shape[1], self.input_shape[2], self.input_shape[3]);
        let mut grad = Tensor::zeros(&self.input_shape);
        let g = grad.data_mut();
        for (o, (&up, am)) in upstream.data().iter().zip(&self.argmax).enumerate() {
            if let Some(ti) = am {
                let (bi, rest) = (o / (n * c), o % (n * c));
                let (ni, ci) = (rest / c, rest % c);
                g[((bi * t + ti) * n + ni) * c + ci] = up;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_is_identity() {
        let x: Tensor<f32> = Tensor::from_fn(&[2, 1, 3, 4], |i| i as f32 - 7.0);
        let p = temporal_maxpool(&x, &[true; 6]).unwrap();
        assert_eq!(p.values.data(), x.data());
    }

    #[test]
    fn ties_route_to_first_step() {
        let x: Tensor<f64> = Tensor::full(&[1, 3, 1, 2], 0.5);
        let p = temporal_maxpool(&x, &[true; 3]).unwrap();
        assert_eq!(p.values.data(), &[0.5, 0.5]);
        let g = p.backward(&Tensor::full(&[1, 1, 2], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn absent_steps_are_skipped() {
        let x: Tensor<f32> = Tensor::from_vec(&[1, 3, 1, 1], vec![9.0, -2.0, -1.0]).unwrap();
        let p = temporal_maxpool(&x, &[false, true, true]).unwrap();
        assert_eq!(p.values.data(), &[-1.0]);
        assert_eq!(p.argmax, vec![Some(2)]);
        let none = temporal_maxpool(&x, &[false; 3]).unwrap();
        assert_eq!(none.values.data(), &[0.0]);
        assert_eq!(none.actor_present, vec![false]);
    }
}
