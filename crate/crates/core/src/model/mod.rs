//! Recognition network (backbone, ROI crops, per-slot head, temporal
//! pooling), the keypoint stream, and late fusion of their outputs.

mod backbone;
mod net;
mod pool;
mod pose;
mod roi;

pub use backbone::{BackboneConfig, ConvBlock, HeadConfig};
pub use net::{snippet_loss, HeadMode, ModelConfig, NetOutput, SnippetBatch, SnippetLoss, SwtaNet};
pub use pool::{temporal_maxpool, PooledLogits};
pub use pose::{PoseConfig, PoseStream};
pub use roi::{roi_align, roi_align_backward, RoiAlignConfig};

use crate::error::{Error, Result};
use crate::tensor::{Param, Real, Tensor};

/// Named `f32` tensors, the unit of checkpointing.
pub type StateDict = Vec<(String, Tensor<f32>)>;

fn state_of<T: Real>(params: Vec<(String, &Param<T>)>) -> StateDict {
    params.into_iter().map(|(n, p)| (n, p.value.cast())).collect()
}

fn load_into<T: Real>(slots: &mut [(String, &mut Param<T>)], state: &StateDict) -> Result<()> {
    for (name, param) in slots.iter_mut() {
        let (_, saved) = state
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::config(format!("checkpoint has no tensor `{name}`")))?;
        if saved.shape() != param.value.shape() {
            return Err(Error::config(format!(
                "checkpoint tensor `{name}` has dims {:?}, model expects {:?}",
                saved.shape(),
                param.value.shape()
            )));
        }
        param.value = saved.cast();
    }
    Ok(())
}

/// `B×A×C` → `B×C×A`.
fn transpose_last2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::config(format!("transpose: expected rank 3, got {:?}", x.shape())));
    }
    let (b, a, c) = (x.dim(0), x.dim(1), x.dim(2));
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for bi in 0..b {
        for ai in 0..a {
            for ci in 0..c {
                out[(bi * c + ci) * a + ai] = src[(bi * a + ai) * c + ci];
            }
        }
    }
    Tensor::from_vec(&[b, c, a], out)
}

/// Mean of the main stream's `B×N×C` probabilities and the pose stream's
/// `B×C` probabilities. Only single-actor clips (`N = 1`) can be fused.
pub fn late_fuse<T: Real>(main: &Tensor<T>, pose: &Tensor<T>) -> Result<Tensor<T>> {
    if main.rank() != 3 || pose.rank() != 2 {
        return Err(Error::config(format!(
            "late_fuse: expected BxNxC and BxC, got {:?} and {:?}",
            main.shape(),
            pose.shape()
        )));
    }
    if main.dim(1) != 1 {
        return Err(Error::config(format!(
            "late_fuse: pose fusion needs one actor slot, got {}",
            main.dim(1)
        )));
    }
    if main.dim(0) != pose.dim(0) || main.dim(2) != pose.dim(1) {
        return Err(Error::config(format!(
            "late_fuse: shapes {:?} and {:?} disagree",
            main.shape(),
            pose.shape()
        )));
    }
    let half = T::of(0.5);
    let data = main.data().iter().zip(pose.data()).map(|(&a, &b)| (a + b) * half).collect();
    Tensor::from_vec(main.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_fuse_averages() {
        let a: Tensor<f64> = Tensor::from_vec(&[1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let b: Tensor<f64> = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(late_fuse(&a, &b).unwrap().data(), &[0.5, 0.5, 0.0]);
        let same = late_fuse(&a, &Tensor::from_vec(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(same.data(), a.data());
    }

    #[test]
    fn late_fuse_rejects_multiple_actors() {
        let a: Tensor<f32> = Tensor::zeros(&[1, 2, 3]);
        let b: Tensor<f32> = Tensor::zeros(&[1, 3]);
        assert!(matches!(late_fuse(&a, &b), Err(Error::Config(_))));
    }

    #[test]
    fn transpose_round_trips() {
        let x: Tensor<f32> = Tensor::from_fn(&[2, 3, 4], |i| i as f32);
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.shape(), &[2, 4, 3]);
        assert_eq!(t.at(&[1, 2, 0]), x.at(&[1, 0, 2]));
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }
}
