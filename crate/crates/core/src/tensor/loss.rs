use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean binary cross-entropy on logits, in the stable form
/// `max(z, 0) - z*t + ln(1 + exp(-|z|))`, with its gradient
/// `(sigmoid(z) - t) / count`.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    bce_with_logits_masked(logits, targets, None)
}

/// As [`bce_with_logits`], averaging only over elements whose mask entry is
/// `true`. Masked-out elements get a zero gradient. An all-false mask yields
/// zero loss.
pub fn bce_with_logits_masked<T: Real>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<(T, Tensor<T>)> {
    if logits.shape() != targets.shape() {
        return Err(Error::config(format!(
            "bce_with_logits: logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::config("bce_with_logits: mask length mismatch"));
        }
    }
    logits.ensure_finite("bce_with_logits logits")?;
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..logits.len()).filter(|&i| active(i)).count();
    let mut grad = Tensor::zeros(logits.shape());
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::of(count as f64);
    let mut total = T::zero();
    for (i, (&z, &t)) in logits.data().iter().zip(targets.data()).enumerate() {
        if !active(i) {
            continue;
        }
        total = total + z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln();
        let s = super::layer::sigmoid(z);
        grad.data_mut()[i] = (s - t) * inv;
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_half_target_is_ln2() {
        let z = Tensor::<f64>::zeros(&[1]);
        let t = Tensor::full(&[1], 0.5);
        let (loss, _) = bce_with_logits(&z, &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_logit_zero_target_gradient() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let t = Tensor::zeros(&[2, 3]);
        let (_, g) = bce_with_logits(&z, &t).unwrap();
        for v in g.data() {
            assert!((v - 0.5 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let z = Tensor::<f32>::from_vec(&[2], vec![500.0, -500.0]).unwrap();
        let t = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let (loss, g) = bce_with_logits(&z, &t).unwrap();
        assert!((loss - 500.0).abs() < 1e-3);
        assert!(g.is_finite());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let z = Tensor::<f64>::zeros(&[2]);
        let t = Tensor::zeros(&[3]);
        assert!(matches!(bce_with_logits(&z, &t), Err(Error::Config(_))));
    }

    #[test]
    fn mask_excludes_elements() {
        let z = Tensor::<f64>::from_vec(&[3], vec![1.0, 100.0, -2.0]).unwrap();
        let t = Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let (masked, g) = bce_with_logits_masked(&z, &t, Some(&[true, false, true])).unwrap();
        let z2 = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let t2 = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let (plain, _) = bce_with_logits(&z2, &t2).unwrap();
        assert_eq!(masked, plain);
        assert_eq!(g.data()[1], 0.0);
    }
}
