use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{axpy, dot, Real, Tensor};

/// Output channels computed together in the patch fast path.
const BLOCK: usize = 8;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: each spatial axis shrinks by `k - 1`.
    Valid,
    /// Zero padding of `(k - 1) / 2` on each side; output keeps the input size.
    /// Requires odd `k`.
    SameZero,
}

/// Cubic 3D convolution, cross-correlation convention (kernel not flipped).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out, in, k, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    n: usize,
    spatial_in: [usize; 3],
    spatial_out: [usize; 3],
    pad: usize,
}

impl<T: Real> Conv3d<T> {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Conv3d {
            kernel,
            in_channels,
            out_channels,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    /// He-normal weights, zero bias.
    pub fn init(kernel: usize, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Conv3d::zeros(kernel, in_channels, out_channels);
        let fan_in = (in_channels * kernel.pow(3)) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        for w in conv.weight.data_mut() {
            *w = T::from_acc(normal.sample(rng));
        }
        conv
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel.pow(3)
    }

    fn geometry(&self, x: &Tensor<T>, padding: Padding) -> Result<Geometry> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.in_channels {
            return Err(Error::DimsMismatch(format!(
                "conv3d expects [n, {}, d, h, w], got {s:?}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let spatial_in = [s[2], s[3], s[4]];
        let (pad, spatial_out) = match padding {
            Padding::Valid => {
                if spatial_in.iter().any(|&d| d < k) {
                    return Err(Error::DimsMismatch(format!(
                        "valid conv with k={k} needs spatial dims >= k, got {spatial_in:?}"
                    )));
                }
                (0, spatial_in.map(|d| d - k + 1))
            }
            Padding::SameZero => {
                if k % 2 == 0 {
                    return Err(Error::Config(format!("same padding needs odd k, got {k}")));
                }
                ((k - 1) / 2, spatial_in)
            }
        };
        Ok(Geometry {
            n: s[0],
            spatial_in,
            spatial_out,
            pad,
        })
    }

    /// True when every output is a single dot product over a whole input
    /// sample, as for patch classification.
    fn is_patch(g: &Geometry, padding: Padding) -> bool {
        padding == Padding::Valid && g.spatial_out == [1, 1, 1]
    }

    pub fn forward(&self, x: &Tensor<T>, padding: Padding) -> Result<Tensor<T>> {
        let g = self.geometry(x, padding)?;
        let [od, oh, ow] = g.spatial_out;
        let out_vox = od * oh * ow;
        let mut out = Tensor::zeros(&[g.n, self.out_channels, od, oh, ow]);
        let w = self.weight.data();
        let b = self.bias.data();

        if Self::is_patch(&g, padding) {
            let taps = self.taps();
            let o = out.data_mut();
            let oc = self.out_channels;
            // Weights as f64 in [tap][channel] order so the channel loop
            // vectorizes with no per-sample conversion.
            let mut wt = vec![0.0f64; taps * oc];
            for c in 0..oc {
                for t in 0..taps {
                    wt[t * oc + c] = w[c * taps + t].to_acc();
                }
            }
            let bias: Vec<f64> = b.iter().map(|v| v.to_acc()).collect();
            let xs = x.data();
            // Two samples at a time share each weight load.
            let mut n = 0;
            while n < g.n {
                let pair = (g.n - n).min(2);
                let s0 = &xs[n * taps..(n + 1) * taps];
                let s1 = if pair == 2 { &xs[(n + 1) * taps..(n + 2) * taps] } else { s0 };
                for c0 in (0..oc).step_by(BLOCK) {
                    let width = (oc - c0).min(BLOCK);
                    let mut a0 = [0.0f64; BLOCK];
                    let mut a1 = [0.0f64; BLOCK];
                    if width == BLOCK {
                        for t in 0..taps {
                            let (x0, x1) = (s0[t].to_acc(), s1[t].to_acc());
                            let wrow: &[f64; BLOCK] = wt[t * oc + c0..t * oc + c0 + BLOCK].try_into().expect("block");
                            for j in 0..BLOCK {
                                a0[j] += x0 * wrow[j];
                                a1[j] += x1 * wrow[j];
                            }
                        }
                    } else {
                        for t in 0..taps {
                            let (x0, x1) = (s0[t].to_acc(), s1[t].to_acc());
                            for j in 0..width {
                                a0[j] += x0 * wt[t * oc + c0 + j];
                                a1[j] += x1 * wt[t * oc + c0 + j];
                            }
                        }
                    }
                    for j in 0..width {
                        o[n * oc + c0 + j] = T::from_acc(bias[c0 + j] + a0[j]);
                        if pair == 2 {
                            o[(n + 1) * oc + c0 + j] = T::from_acc(bias[c0 + j] + a1[j]);
                        }
                    }
                }
                n += pair;
            }
            return Ok(out);
        }

        let [id, ih, iw] = g.spatial_in;
        let in_vox = id * ih * iw;
        let k = self.kernel;
        let mut acc = vec![0.0f64; out_vox];
        for n in 0..g.n {
            for oc in 0..self.out_channels {
                acc.fill(b[oc].to_acc());
                for ic in 0..self.in_channels {
                    let xin = &x.data()[(n * self.in_channels + ic) * in_vox..][..in_vox];
                    let wk = &w[(oc * self.in_channels + ic) * k * k * k..][..k * k * k];
                    for kz in 0..k {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wk[(kz * k + ky) * k + kx].to_acc();
                                let Some((x0, x1)) = span(ow, iw, kx, g.pad) else { continue };
                                for oz in 0..od {
                                    let Some(iz) = shifted(oz, kz, g.pad, id) else { continue };
                                    for oy in 0..oh {
                                        let Some(iy) = shifted(oy, ky, g.pad, ih) else { continue };
                                        let row = (oz * oh + oy) * ow;
                                        let irow = (iz * ih + iy) * iw;
                                        let ix0 = x0 + kx - g.pad;
                                        axpy(
                                            &mut acc[row + x0..row + x1],
                                            wv,
                                            &xin[irow + ix0..irow + ix0 + (x1 - x0)],
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                let dst = &mut out.data_mut()[(n * self.out_channels + oc) * out_vox..][..out_vox];
                for (d, &a) in dst.iter_mut().zip(&acc) {
                    *d = T::from_acc(a);
                }
            }
        }
        out.debug_check_finite("conv3d forward");
        Ok(out)
    }

    /// Gradients of the forward map given `grad_out = dL/d(output)`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, padding: Padding) -> Result<ConvGrads<T>> {
        self.backward_impl(x, grad_out, padding, true)
    }

    /// Like [`Conv3d::backward`] but leaves the input gradient empty.
    pub fn backward_params(&self, x: &Tensor<T>, grad_out: &Tensor<T>, padding: Padding) -> Result<ConvGrads<T>> {
        self.backward_impl(x, grad_out, padding, false)
    }

    fn backward_impl(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        padding: Padding,
        want_input: bool,
    ) -> Result<ConvGrads<T>> {
        let g = self.geometry(x, padding)?;
        let [od, oh, ow] = g.spatial_out;
        grad_out.expect_shape(&[g.n, self.out_channels, od, oh, ow], "conv3d grad_out")?;
        let k = self.kernel;
        let taps = self.taps();
        let w = self.weight.data();
        let go = grad_out.data();

        let mut gw = vec![0.0f64; self.weight.len()];
        let mut gb = vec![0.0f64; self.out_channels];
        let mut gx = if want_input { vec![0.0f64; x.len()] } else { Vec::new() };

        if Self::is_patch(&g, padding) {
            let oc_n = self.out_channels;
            for n in 0..g.n {
                for oc in 0..oc_n {
                    gb[oc] += go[n * oc_n + oc].to_acc();
                }
            }
            // Accumulate in [tap][channel] order, tiled over taps so the
            // block stays in cache while every sample streams past it.
            const TILE: usize = 64;
            let xs = x.data();
            let g64: Vec<f64> = go.iter().map(|v| v.to_acc()).collect();
            let mut gwt = vec![0.0f64; taps * oc_n];
            for t0 in (0..taps).step_by(TILE) {
                let t1 = (t0 + TILE).min(taps);
                for n in 0..g.n {
                    let grow = &g64[n * oc_n..(n + 1) * oc_n];
                    for t in t0..t1 {
                        let xv = xs[n * taps + t].to_acc();
                        for (a, &gv) in gwt[t * oc_n..(t + 1) * oc_n].iter_mut().zip(grow) {
                            *a += xv * gv;
                        }
                    }
                }
            }
            for oc in 0..oc_n {
                for t in 0..taps {
                    gw[oc * taps + t] = gwt[t * oc_n + oc];
                }
            }
            if want_input {
                for n in 0..g.n {
                    for oc in 0..oc_n {
                        let gv = go[n * oc_n + oc].to_acc();
                        if gv != 0.0 {
                            axpy(&mut gx[n * taps..(n + 1) * taps], gv, &w[oc * taps..(oc + 1) * taps]);
                        }
                    }
                }
            }
        } else {
            let [id, ih, iw] = g.spatial_in;
            let in_vox = id * ih * iw;
            let out_vox = od * oh * ow;
            for n in 0..g.n {
                for oc in 0..self.out_channels {
                    let gout = &go[(n * self.out_channels + oc) * out_vox..][..out_vox];
                    gb[oc] += gout.iter().map(|v| v.to_acc()).sum::<f64>();
                    for ic in 0..self.in_channels {
                        let xoff = (n * self.in_channels + ic) * in_vox;
                        let xin = &x.data()[xoff..xoff + in_vox];
                        let woff = (oc * self.in_channels + ic) * k * k * k;
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let widx = woff + (kz * k + ky) * k + kx;
                                    let wv = w[widx].to_acc();
                                    let Some((x0, x1)) = span(ow, iw, kx, g.pad) else { continue };
                                    let mut s = 0.0;
                                    for oz in 0..od {
                                        let Some(iz) = shifted(oz, kz, g.pad, id) else { continue };
                                        for oy in 0..oh {
                                            let Some(iy) = shifted(oy, ky, g.pad, ih) else { continue };
                                            let row = (oz * oh + oy) * ow;
                                            let irow = (iz * ih + iy) * iw;
                                            let ix0 = x0 + kx - g.pad;
                                            let len = x1 - x0;
                                            s += dot(&gout[row + x0..row + x1], &xin[irow + ix0..irow + ix0 + len]);
                                            if want_input {
                                                axpy(
                                                    &mut gx[xoff + irow + ix0..xoff + irow + ix0 + len],
                                                    wv,
                                                    &gout[row + x0..row + x1],
                                                );
                                            }
                                        }
                                    }
                                    gw[widx] += s;
                                }
                            }
                        }
                    }
                }
            }
        }

        let to_t = |v: Vec<f64>, shape: &[usize]| {
            Tensor::from_vec(shape, v.into_iter().map(T::from_acc).collect()).expect("shape")
        };
        Ok(ConvGrads {
            input: if want_input {
                to_t(gx, x.shape())
            } else {
                Tensor::zeros(&[0])
            },
            weight: to_t(gw, self.weight.shape()),
            bias: to_t(gb, self.bias.shape()),
        })
    }
}

/// Input coordinate read by output `o` at tap `k`, if inside `[0, n)`.
#[inline]
fn shifted(o: usize, k: usize, pad: usize, n: usize) -> Option<usize> {
    let i = (o + k).checked_sub(pad)?;
    (i < n).then_some(i)
}

/// Range of output x positions whose tap `kx` reads inside the input row.
#[inline]
fn span(out_w: usize, in_w: usize, kx: usize, pad: usize) -> Option<(usize, usize)> {
    let x0 = pad.saturating_sub(kx);
    let x1 = out_w.min((in_w + pad).saturating_sub(kx));
    (x1 > x0).then_some((x0, x1))
}

/// Free-function form of [`Conv3d::forward`].
pub fn conv3d_forward<T: Real>(x: &Tensor<T>, layer: &Conv3d<T>, padding: Padding) -> Result<Tensor<T>> {
    layer.forward(x, padding)
}

/// Free-function form of [`Conv3d::backward`].
pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    layer: &Conv3d<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    layer.backward(x, grad_out, padding)
}
