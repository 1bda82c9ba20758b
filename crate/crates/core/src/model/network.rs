//! The multi-scale likelihood network.
//!
//! Each scale is a `k x k x k` convolution evaluated at the center of the
//! input patch (a valid convolution over the centered `k^3` crop), followed by
//! batch norm and ReLU. Scale features are concatenated and classified by a
//! fully-connected chain: `Dense -> BN -> ReLU -> Dropout` on hidden layers and
//! a plain `Dense` head producing two logits.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::MonetConfig;
use crate::error::{Error, Result};
use crate::volume::Volume;
use crate::nn::{
    decode_checkpoint, dropout_mask, encode_checkpoint, mul, relu, relu_backward, BatchNorm, BnCache, Conv3d, Dense,
    Mode, Padding, Real, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBranch<T> {
    pub conv: Conv3d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub dense: Dense<T>,
    pub bn: BatchNorm<T>,
}

/// All weights and buffers of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MonetParams<T> {
    pub patch_size: usize,
    pub dropout: f64,
    pub scales: Vec<ScaleBranch<T>>,
    pub hidden: Vec<HiddenLayer<T>>,
    pub head: Dense<T>,
    /// Set once the parameters have seen any training.
    pub trained: bool,
}

impl<T: Real> MonetParams<T> {
    /// Freshly initialized network (He-normal weights, identity batch norm).
    pub fn init(cfg: &MonetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.filters_per_scale;
        let scales = cfg
            .scales
            .iter()
            .map(|&k| ScaleBranch {
                conv: Conv3d::init(k, 1, f, rng),
                bn: BatchNorm::new(f),
            })
            .collect();
        let mut width = cfg.feature_width();
        let (last, hidden_sizes) = cfg.fc_sizes.split_last().expect("validated");
        let mut hidden = Vec::new();
        for &h in hidden_sizes {
            hidden.push(HiddenLayer {
                dense: Dense::init(width, h, rng),
                bn: BatchNorm::new(h),
            });
            width = h;
        }
        Ok(MonetParams {
            patch_size: cfg.patch_size,
            dropout: cfg.dropout,
            scales,
            hidden,
            head: Dense::init(width, *last, rng),
            trained: false,
        })
    }

    /// Every weight zero, batch norm identity.
    pub fn zeros(cfg: &MonetConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = MonetParams::init(cfg, &mut rng)?;
        for t in p.parameters_mut() {
            t.data_mut().fill(T::zero());
        }
        for s in &mut p.scales {
            s.bn.gamma.data_mut().fill(T::one());
        }
        for h in &mut p.hidden {
            h.bn.gamma.data_mut().fill(T::one());
        }
        Ok(p)
    }

    pub fn scale_sizes(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.conv.kernel).collect()
    }

    pub fn max_scale(&self) -> usize {
        self.scales.iter().map(|s| s.conv.kernel).max().unwrap_or(1)
    }

    /// Trainable tensors, in a fixed order shared with [`Gradients`].
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for s in &self.scales {
            out.extend([&s.conv.weight, &s.conv.bias, &s.bn.gamma, &s.bn.beta]);
        }
        for h in &self.hidden {
            out.extend([&h.dense.weight, &h.dense.bias, &h.bn.gamma, &h.bn.beta]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.scales {
            out.extend([&mut s.conv.weight, &mut s.conv.bias, &mut s.bn.gamma, &mut s.bn.beta]);
        }
        for h in &mut self.hidden {
            out.extend([&mut h.dense.weight, &mut h.dense.bias, &mut h.bn.gamma, &mut h.bn.beta]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for s in &self.scales {
            out.extend([&s.bn.running_mean, &s.bn.running_var]);
        }
        for h in &self.hidden {
            out.extend([&h.bn.running_mean, &h.bn.running_var]);
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.scales {
            out.extend([&mut s.bn.running_mean, &mut s.bn.running_var]);
        }
        for h in &mut self.hidden {
            out.extend([&mut h.bn.running_mean, &mut h.bn.running_var]);
        }
        out
    }

    /// The architecture as a config (training fields defaulted).
    pub fn architecture(&self) -> MonetConfig {
        let mut fc: Vec<usize> = self.hidden.iter().map(|h| h.dense.out_features).collect();
        fc.push(self.head.out_features);
        MonetConfig {
            patch_size: self.patch_size,
            scales: self.scale_sizes(),
            filters_per_scale: self.scales[0].conv.out_channels,
            fc_sizes: fc,
            dropout: self.dropout,
            ..MonetConfig::default()
        }
    }

    pub fn cast<U: Real>(&self) -> MonetParams<U> {
        let bn = |b: &BatchNorm<T>| BatchNorm {
            channels: b.channels,
            gamma: b.gamma.cast(),
            beta: b.beta.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            momentum: b.momentum,
            eps: b.eps,
        };
        let dense = |d: &Dense<T>| Dense {
            in_features: d.in_features,
            out_features: d.out_features,
            weight: d.weight.cast(),
            bias: d.bias.cast(),
        };
        MonetParams {
            patch_size: self.patch_size,
            dropout: self.dropout,
            scales: self
                .scales
                .iter()
                .map(|s| ScaleBranch {
                    conv: Conv3d {
                        kernel: s.conv.kernel,
                        in_channels: s.conv.in_channels,
                        out_channels: s.conv.out_channels,
                        weight: s.conv.weight.cast(),
                        bias: s.conv.bias.cast(),
                    },
                    bn: bn(&s.bn),
                })
                .collect(),
            hidden: self
                .hidden
                .iter()
                .map(|h| HiddenLayer {
                    dense: dense(&h.dense),
                    bn: bn(&h.bn),
                })
                .collect(),
            head: dense(&self.head),
            trained: self.trained,
        }
    }

    fn manifest(&self) -> Vec<u32> {
        let arch = self.architecture();
        let mut meta = vec![arch.patch_size as u32, arch.scales.len() as u32];
        meta.extend(arch.scales.iter().map(|&k| k as u32));
        meta.push(arch.filters_per_scale as u32);
        meta.push(arch.fc_sizes.len() as u32);
        meta.extend(arch.fc_sizes.iter().map(|&k| k as u32));
        meta.push(self.trained as u32);
        meta.push((self.dropout * 1e6).round() as u32);
        meta
    }

    /// Serializes parameters and buffers to the checkpoint format.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut tensors = self.parameters();
        tensors.extend(self.buffers());
        encode_checkpoint(&self.manifest(), &tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }
}

impl MonetParams<f32> {
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let ck = decode_checkpoint(bytes)?;
        let bad = || Error::Validation("checkpoint manifest is malformed".into());
        let mut m = ck.meta.iter().map(|&v| v as usize);
        let mut next = || m.next().ok_or_else(bad);
        let patch_size = next()?;
        let n_scales = next()?;
        let scales = (0..n_scales).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let filters_per_scale = next()?;
        let n_fc = next()?;
        let fc_sizes = (0..n_fc).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let trained = next()? != 0;
        let dropout = next()? as f64 / 1e6;
        let cfg = MonetConfig {
            patch_size,
            scales,
            filters_per_scale,
            fc_sizes,
            dropout,
            ..MonetConfig::default()
        };
        let mut p = MonetParams::<f32>::zeros(&cfg)?;
        p.trained = trained;
        let n_params = p.parameters().len();
        let n_buffers = p.buffers().len();
        if ck.tensors.len() != n_params + n_buffers {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, architecture needs {}",
                ck.tensors.len(),
                n_params + n_buffers
            )));
        }
        let mut it = ck.tensors.into_iter();
        for slot in p.parameters_mut() {
            assign(slot, it.next().expect("counted"))?;
        }
        for slot in p.buffers_mut() {
            assign(slot, it.next().expect("counted"))?;
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        MonetParams::from_checkpoint(&bytes)
    }
}

fn assign(slot: &mut Tensor<f32>, value: Tensor<f32>) -> Result<()> {
    if slot.shape() != value.shape() {
        return Err(Error::Validation(format!(
            "checkpoint tensor shape {:?} does not match {:?}",
            value.shape(),
            slot.shape()
        )));
    }
    *slot = value;
    Ok(())
}

/// Gradients for [`MonetParams::parameters`], same order.
pub type Gradients<T> = Vec<Tensor<T>>;

/// Center crops of a set of patches, one contiguous block per scale.
///
/// Crops never change during training, so they are cut once.
#[derive(Debug, Clone)]
pub struct PatchBank<T> {
    pub len: usize,
    scales: Vec<usize>,
    crops: Vec<Vec<T>>,
}

impl<T: Real> PatchBank<T> {
    /// Cuts crops for every scale of `params` from `patches`, each of length
    /// `patch_size^3` in (z, y, x) order.
    pub fn from_patches(patches: &[Vec<T>], patch_size: usize, scales: &[usize]) -> Result<Self> {
        let kk = patch_size;
        let mut crops: Vec<Vec<T>> = scales.iter().map(|&k| Vec::with_capacity(patches.len() * k * k * k)).collect();
        for p in patches {
            if p.len() != kk * kk * kk {
                return Err(Error::DimsMismatch(format!(
                    "patch has {} values, expected {}",
                    p.len(),
                    kk * kk * kk
                )));
            }
            for (dst, &k) in crops.iter_mut().zip(scales) {
                let o = (kk - k) / 2;
                for z in 0..k {
                    for y in 0..k {
                        let row = ((z + o) * kk + (y + o)) * kk + o;
                        dst.extend_from_slice(&p[row..row + k]);
                    }
                }
            }
        }
        Ok(PatchBank {
            len: patches.len(),
            scales: scales.to_vec(),
            crops,
        })
    }

    /// Cuts crops straight from a volume around each center voxel, reading
    /// zeros outside the grid (the same padding the fully-convolutional pass
    /// uses).
    pub fn from_volume(v: &Volume, centers: &[usize], scales: &[usize]) -> Result<Self> {
        let dims = v.dims();
        let data = v.data();
        let mut crops: Vec<Vec<T>> = scales.iter().map(|&k| Vec::with_capacity(centers.len() * k * k * k)).collect();
        for &c in centers {
            let (cx, cy, cz) = dims.coord_of(c)?;
            for (dst, &k) in crops.iter_mut().zip(scales) {
                let r = (k / 2) as isize;
                for dz in -r..=r {
                    for dy in -r..=r {
                        let z = cz as isize + dz;
                        let y = cy as isize + dy;
                        let row_ok = z >= 0 && (z as usize) < dims.nz && y >= 0 && (y as usize) < dims.ny;
                        for dx in -r..=r {
                            let x = cx as isize + dx;
                            let val = if row_ok && x >= 0 && (x as usize) < dims.nx {
                                data[dims.index_unchecked(x as usize, y as usize, z as usize)]
                            } else {
                                0.0
                            };
                            dst.push(T::from_acc(val as f64));
                        }
                    }
                }
            }
        }
        Ok(PatchBank {
            len: centers.len(),
            scales: scales.to_vec(),
            crops,
        })
    }

    /// Rows of `banks` stacked in order. All banks must share scales.
    pub fn concat(banks: &[PatchBank<T>]) -> Self {
        let scales = banks.first().map(|b| b.scales.clone()).unwrap_or_default();
        let mut crops = vec![Vec::new(); scales.len()];
        for b in banks {
            assert_eq!(b.scales, scales, "patch banks with different scales");
            for (dst, src) in crops.iter_mut().zip(&b.crops) {
                dst.extend_from_slice(src);
            }
        }
        PatchBank {
            len: banks.iter().map(|b| b.len).sum(),
            scales,
            crops,
        }
    }

    /// Per-scale input tensors `[b, 1, k, k, k]` for the selected rows.
    pub fn gather(&self, rows: &[usize]) -> Vec<Tensor<T>> {
        self.scales
            .iter()
            .zip(&self.crops)
            .map(|(&k, crop)| {
                let n = k * k * k;
                let mut data = Vec::with_capacity(rows.len() * n);
                for &r in rows {
                    data.extend_from_slice(&crop[r * n..(r + 1) * n]);
                }
                Tensor::from_vec(&[rows.len(), 1, k, k, k], data).expect("shape")
            })
            .collect()
    }
}

struct ScaleCache<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    act: Tensor<T>,
}

struct HiddenCache<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    act: Tensor<T>,
    mask: Option<Tensor<T>>,
}

/// Intermediate values kept by a forward pass for the backward pass.
pub struct ForwardCache<T> {
    scales: Vec<ScaleCache<T>>,
    hidden: Vec<HiddenCache<T>>,
    head_input: Tensor<T>,
}

impl<T: Real> MonetParams<T> {
    /// Batched forward pass over per-scale crops (from [`PatchBank::gather`]).
    ///
    /// Train mode normalizes with batch statistics and applies dropout with
    /// masks drawn from `rng`; call [`MonetParams::update_running_stats`]
    /// afterwards to fold the batch statistics into the running ones. Eval
    /// mode uses running statistics and no dropout.
    pub fn forward(
        &self,
        inputs: Vec<Tensor<T>>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        if inputs.len() != self.scales.len() {
            return Err(Error::DimsMismatch(format!(
                "{} scale inputs for {} scales",
                inputs.len(),
                self.scales.len()
            )));
        }
        let n = inputs[0].shape()[0];
        let width: usize = self.scales.iter().map(|s| s.conv.out_channels).sum();
        let mut features = vec![T::zero(); n * width];
        let mut scale_caches = Vec::with_capacity(self.scales.len());
        let mut col = 0;
        for (branch, input) in self.scales.iter().zip(inputs) {
            let f = branch.conv.out_channels;
            let z = branch.conv.forward(&input, Padding::Valid)?;
            let (y, bn) = match mode {
                Mode::Train => {
                    let (y, c) = branch.bn.forward_batch(&z)?;
                    (y, Some(c))
                }
                Mode::Eval => (branch.bn.forward_eval(&z)?, None),
            };
            let act = relu(&y).reshape(&[n, f])?;
            for (r, row) in act.data().chunks_exact(f).enumerate() {
                features[r * width + col..r * width + col + f].copy_from_slice(row);
            }
            col += f;
            scale_caches.push(ScaleCache { input, bn, act });
        }

        let mut x = Tensor::from_vec(&[n, width], features)?;
        let mut hidden_caches = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let z = layer.dense.forward(&x)?;
            let (y, bn) = match mode {
                Mode::Train => {
                    let (y, c) = layer.bn.forward_batch(&z)?;
                    (y, Some(c))
                }
                Mode::Eval => (layer.bn.forward_eval(&z)?, None),
            };
            let act = relu(&y);
            let (out, mask) = if mode == Mode::Train && self.dropout > 0.0 {
                let m = dropout_mask(act.shape(), self.dropout, rng)?;
                (mul(&act, &m), Some(m))
            } else {
                (act.clone(), None)
            };
            hidden_caches.push(HiddenCache {
                input: std::mem::replace(&mut x, out),
                bn,
                act,
                mask,
            });
        }
        let logits = self.head.forward(&x)?;
        Ok((
            logits,
            ForwardCache {
                scales: scale_caches,
                hidden: hidden_caches,
                head_input: x,
            },
        ))
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (branch, c) in self.scales.iter_mut().zip(&cache.scales) {
            if let Some(bn) = &c.bn {
                branch.bn.update_running(bn);
            }
        }
        for (layer, c) in self.hidden.iter_mut().zip(&cache.hidden) {
            if let Some(bn) = &c.bn {
                layer.bn.update_running(bn);
            }
        }
    }

    /// Parameter gradients from a train-mode forward pass.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let head = self.head.backward(&cache.head_input, grad_logits)?;
        let mut g = head.input;
        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (layer, c) in self.hidden.iter().zip(&cache.hidden).rev() {
            if let Some(m) = &c.mask {
                g = mul(&g, m);
            }
            let g_act = relu_backward(&c.act, &g);
            let bn_cache = c.bn.as_ref().ok_or_else(|| Error::Validation("backward needs a train-mode forward".into()))?;
            let bn = layer.bn.backward(bn_cache, &g_act)?;
            let d = layer.dense.backward(&c.input, &bn.input)?;
            g = d.input;
            hidden_grads.push([d.weight, d.bias, bn.gamma, bn.beta]);
        }
        hidden_grads.reverse();

        let n = g.shape()[0];
        let width = g.shape()[1];
        let mut out = Vec::new();
        let mut col = 0;
        for (branch, c) in self.scales.iter().zip(&cache.scales) {
            let f = branch.conv.out_channels;
            let mut gs = Vec::with_capacity(n * f);
            for r in 0..n {
                gs.extend_from_slice(&g.data()[r * width + col..r * width + col + f]);
            }
            col += f;
            let gs = Tensor::from_vec(&[n, f], gs)?;
            let g_act = relu_backward(&c.act, &gs).reshape(&[n, f, 1, 1, 1])?;
            let bn_cache = c.bn.as_ref().ok_or_else(|| Error::Validation("backward needs a train-mode forward".into()))?;
            let bn = branch.bn.backward(bn_cache, &g_act)?;
            let conv = branch.conv.backward_params(&c.input, &bn.input, Padding::Valid)?;
            out.extend([conv.weight, conv.bias, bn.gamma, bn.beta]);
        }
        for h in hidden_grads {
            out.extend(h);
        }
        out.extend([head.weight, head.bias]);
        Ok(out)
    }

    /// Eval-mode logits for a single `patch_size^3` patch in (z, y, x) order.
    pub fn forward_patch(&self, patch: &[T]) -> Result<[T; 2]> {
        let k = self.patch_size;
        if patch.len() != k * k * k {
            return Err(Error::DimsMismatch(format!(
                "patch has {} values, expected {k}^3",
                patch.len()
            )));
        }
        let bank = PatchBank::from_patches(&[patch.to_vec()], k, &self.scale_sizes())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.forward(bank.gather(&[0]), Mode::Eval, &mut rng)?;
        Ok([logits.data()[0], logits.data()[1]])
    }
}

/// Free-function form of [`MonetParams::forward_patch`].
pub fn monet_forward_patch<T: Real>(params: &MonetParams<T>, patch: &[T]) -> Result<[T; 2]> {
    params.forward_patch(patch)
}
