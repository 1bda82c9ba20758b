use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{axpy, dot, Real, Tensor};
use crate::error::{Error, Result};

/// Fully-connected layer on `[n, in]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    /// He-normal weights, zero bias.
    pub fn init(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let mut d = Dense::zeros(in_features, out_features);
        let normal = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).expect("valid std");
        for w in d.weight.data_mut() {
            *w = T::from_acc(normal.sample(rng));
        }
        d
    }

    fn batch(&self, x: &Tensor<T>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.in_features {
            return Err(Error::DimsMismatch(format!(
                "dense expects [n, {}], got {s:?}",
                self.in_features
            )));
        }
        Ok(s[0])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.batch(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[n, fo]);
        let w = self.weight.data();
        let b = self.bias.data();
        for (row, o) in x.data().chunks_exact(fi).zip(out.data_mut().chunks_exact_mut(fo)) {
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = T::from_acc(b[j].to_acc() + dot(&w[j * fi..(j + 1) * fi], row));
            }
        }
        out.debug_check_finite("dense forward");
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        let n = self.batch(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        grad_out.expect_shape(&[n, fo], "dense grad_out")?;
        let w = self.weight.data();
        let mut gw = vec![0.0f64; fi * fo];
        let mut gb = vec![0.0f64; fo];
        let mut gx = vec![0.0f64; n * fi];
        for s in 0..n {
            let row = &x.data()[s * fi..(s + 1) * fi];
            for j in 0..fo {
                let g = grad_out.data()[s * fo + j].to_acc();
                if g == 0.0 {
                    continue;
                }
                gb[j] += g;
                axpy(&mut gw[j * fi..(j + 1) * fi], g, row);
                axpy(&mut gx[s * fi..(s + 1) * fi], g, &w[j * fi..(j + 1) * fi]);
            }
        }
        let to_t = |v: Vec<f64>, shape: &[usize]| {
            Tensor::from_vec(shape, v.into_iter().map(T::from_acc).collect()).expect("shape")
        };
        Ok(DenseGrads {
            input: to_t(gx, &[n, fi]),
            weight: to_t(gw, &[fo, fi]),
            bias: to_t(gb, &[fo]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        let mut d = Dense::<f64>::zeros(2, 1);
        d.weight.data_mut().copy_from_slice(&[2.0, -1.0]);
        d.bias.data_mut()[0] = 0.5;
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[1.5, 4.5]);
        let g = Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap();
        let grads = d.backward(&x, &g).unwrap();
        assert_eq!(grads.weight.data(), &[-2.0, -1.0]);
        assert_eq!(grads.bias.data(), &[0.0]);
        assert_eq!(grads.input.data(), &[2.0, -1.0, -2.0, 1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let d = Dense::<f32>::zeros(3, 2);
        assert!(d.forward(&Tensor::zeros(&[2, 4])).is_err());
    }
}
