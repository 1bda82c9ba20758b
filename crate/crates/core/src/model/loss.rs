//! The spatially-varying, label-balanced cross-entropy.

use super::samples::TrainingSample;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::volume::Label;

/// Mean over the batch of `-weight * class_weight * log p(label)`, and its
/// gradient with respect to the `[n, 2]` logits.
///
/// A segmentation sample whose geodesic weight is 1 has coefficient 0 and so
/// contributes nothing, whatever the network predicts.
pub fn adaptive_loss<T: Real>(batch: &[TrainingSample], logits: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let n = batch.len();
    logits.expect_shape(&[n, 2], "logits")?;
    if !logits.all_finite() {
        return Err(Error::Validation("non-finite logits".into()));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(2 * n);
    let inv_n = 1.0 / n.max(1) as f64;
    for (s, z) in batch.iter().zip(logits.data().chunks_exact(2)) {
        let (z0, z1) = (z[0].to_acc(), z[1].to_acc());
        let m = z0.max(z1);
        let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
        let (lp0, lp1) = (z0 - lse, z1 - lse);
        let y = (s.label == Label::Foreground) as usize;
        let c = s.coefficient();
        loss -= c * if y == 1 { lp1 } else { lp0 };
        let (p0, p1) = (lp0.exp(), lp1.exp());
        grad.push(T::from_acc(c * (p0 - (y == 0) as u8 as f64) * inv_n));
        grad.push(T::from_acc(c * (p1 - (y == 1) as u8 as f64) * inv_n));
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, 2], grad)?))
}
