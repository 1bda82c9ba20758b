use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU, using the forward output to locate active units.
pub fn relu_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`. Multiplying activations by the mask is the forward pass;
/// multiplying gradients by it is the backward pass.
pub fn dropout_mask<T: Real>(shape: &[usize], p: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    let keep = T::from_acc(1.0 / (1.0 - p));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if p > 0.0 && rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// Applies dropout in place for training; a no-op when `p == 0`.
pub fn dropout<T: Real>(x: &Tensor<T>, p: f64, rng: &mut impl Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    let mask = dropout_mask(x.shape(), p, rng)?;
    Ok((mul(x, &mask), mask))
}

/// Row-wise log-softmax of `[n, c]` logits.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::DimsMismatch(format!("log_softmax expects [n, c], got {s:?}")));
    }
    let c = s[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_acc()));
        let lse = m + row.iter().map(|v| (v.to_acc() - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = T::from_acc(v.to_acc() - lse);
        }
    }
    Ok(out)
}

pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(log_softmax(logits)?.map(|v| v.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let (y, _) = dropout(&x, 0.0, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&x, 1.0, &mut rng).is_err());
        assert!(dropout(&x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Tensor<f64> = dropout_mask(&[10_000], 0.3, &mut rng).unwrap();
        let kept = m.data().iter().filter(|&&v| v > 0.0).count();
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
        assert!((kept as f64 / 10_000.0 - 0.7).abs() < 0.02);
    }

    #[test]
    fn log_softmax_symmetric_pair() {
        let x = Tensor::from_vec(&[1, 2], vec![0.0f64, 0.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((y.data()[0] + ln2).abs() < 1e-15);
        assert!((y.data()[1] + ln2).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_is_stable() {
        let x = Tensor::from_vec(&[1, 2], vec![1000.0f64, 0.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        assert!(y.all_finite());
        assert!(y.data()[0].abs() < 1e-12);
    }

    #[test]
    fn relu_backward_masks() {
        let x = Tensor::from_vec(&[4], vec![-1.0f64, 0.0, 2.0, 3.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 3.0]);
        let g = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        assert_eq!(relu_backward(&y, &g).data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
