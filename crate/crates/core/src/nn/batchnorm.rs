use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[n, c, ...]` inputs; statistics are
/// taken over the batch axis and any trailing spatial axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// `(batch, inner)` where `inner` is the spatial size per channel.
    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::DimsMismatch(format!(
                "batchnorm expects [n, {}, ...], got {s:?}",
                self.channels
            )));
        }
        Ok((s[0], s[2..].iter().product()))
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (y, cache) = self.forward_batch(x)?;
        self.update_running(&cache);
        Ok((y, cache))
    }

    /// Normalizes with batch statistics without touching the running ones;
    /// pair with [`BatchNorm::update_running`].
    pub fn forward_batch(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (n, inner) = self.layout(x)?;
        let c = self.channels;
        let m = (n * inner) as f64;
        if m == 0.0 {
            return Err(Error::Validation("batchnorm on an empty batch".into()));
        }
        let xd = x.data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let s = &xd[(b * c + ch) * inner..][..inner];
                mean[ch] += s.iter().map(|v| v.to_acc()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let s = &xd[(b * c + ch) * inner..][..inner];
                var[ch] += s.iter().map(|v| (v.to_acc() - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                let g = self.gamma.data()[ch].to_acc();
                let be = self.beta.data()[ch].to_acc();
                for (i, xi) in xd.iter().enumerate().skip(off).take(inner) {
                    let h = (xi.to_acc() - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = T::from_acc(h);
                    y.data_mut()[i] = T::from_acc(g * h + be);
                }
            }
        }

        y.debug_check_finite("batchnorm forward");
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
                count: n * inner,
            },
        ))
    }

    /// Moves the running estimates toward the batch statistics in `cache`
    /// (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let m = cache.count as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..self.channels {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::from_acc((1.0 - self.momentum) * rm.to_acc() + self.momentum * cache.mean[ch]);
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::from_acc((1.0 - self.momentum) * rv.to_acc() + self.momentum * cache.var[ch] * unbias);
        }
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, inner) = self.layout(x)?;
        let c = self.channels;
        let (scale, shift) = self.eval_affine();
        let mut y = x.clone();
        for b in 0..n {
            for ch in 0..c {
                for v in &mut y.data_mut()[(b * c + ch) * inner..][..inner] {
                    *v = T::from_acc(v.to_acc() * scale[ch] + shift[ch]);
                }
            }
        }
        Ok(y)
    }

    /// Eval-mode normalization folded into `y = x * scale + shift` per channel.
    pub fn eval_affine(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.channels)
            .map(|ch| {
                let inv = 1.0 / (self.running_var.data()[ch].to_acc() + self.eps).sqrt();
                let g = self.gamma.data()[ch].to_acc() * inv;
                (g, self.beta.data()[ch].to_acc() - self.running_mean.data()[ch].to_acc() * g)
            })
            .unzip()
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
        grad_out.expect_shape(cache.xhat.shape(), "batchnorm grad_out")?;
        let (n, inner) = self.layout(grad_out)?;
        let c = self.channels;
        let m = (n * inner) as f64;
        let g = grad_out.data();
        let h = cache.xhat.data();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gh = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    sum_g[ch] += g[i].to_acc();
                    sum_gh[ch] += g[i].to_acc() * h[i].to_acc();
                }
            }
        }
        let mut dx = Tensor::zeros(grad_out.shape());
        for b in 0..n {
            for ch in 0..c {
                let k = self.gamma.data()[ch].to_acc() * cache.inv_std[ch] / m;
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let v = k * (m * g[i].to_acc() - sum_g[ch] - h[i].to_acc() * sum_gh[ch]);
                    dx.data_mut()[i] = T::from_acc(v);
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::from_vec(&[c], v.into_iter().map(T::from_acc).collect()).expect("shape");
        Ok(BnGrads {
            input: dx,
            gamma: to_t(sum_gh),
            beta: to_t(sum_g),
        })
    }
}
