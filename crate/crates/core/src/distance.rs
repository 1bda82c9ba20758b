//! Exact Euclidean distance transforms on the voxel grid.
//!
//! Separable lower-envelope algorithm (Felzenszwalb and Huttenlocher): one
//! pass of 1D squared-distance transforms per axis, with spacing folded into
//! each axis so anisotropic grids are exact too.

use crate::volume::{Dims, Spacing};

/// Squared distance (in mm^2) from every voxel to the nearest voxel where
/// `mask` is true; infinite everywhere if the mask is empty.
pub fn squared_edt(mask: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    assert_eq!(mask.len(), dims.len(), "mask length");
    let mut f: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);

    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line[..nx].copy_from_slice(&f[base..base + nx]);
            scratch.transform(&line[..nx], spacing.sx, &mut out[..nx]);
            f[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..ny], spacing.sy, &mut out[..ny]);
            for y in 0..ny {
                f[x + nx * (y + ny * z)] = out[y];
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..nz], spacing.sz, &mut out[..nz]);
            for z in 0..nz {
                f[x + nx * (y + ny * z)] = out[z];
            }
        }
    }
    f
}

/// Distance (mm) from every voxel to the nearest true voxel.
pub fn edt(mask: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    squared_edt(mask, dims, spacing).into_iter().map(f64::sqrt).collect()
}

/// Signed distance to the boundary of `mask`: negative inside (distance to
/// the nearest outside voxel), positive outside (distance to the nearest
/// inside voxel).
pub fn signed_distance(mask: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let to_inside = edt(mask, dims, spacing);
    let to_outside = edt(&outside, dims, spacing);
    mask.iter()
        .zip(to_inside.iter().zip(&to_outside))
        .map(|(&m, (&di, &dout))| if m { -dout } else { di })
        .collect()
}

/// Workspace for the 1D lower envelope of parabolas.
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// `out[q] = min_p f[p] + (s (q - p))^2`.
    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        let s2 = s * s;
        let mut k: isize = -1;
        for q in 0..n {
            if f[q].is_infinite() {
                continue;
            }
            let qf = q as f64;
            loop {
                if k < 0 {
                    k = 0;
                    self.v[0] = q;
                    self.z[0] = f64::NEG_INFINITY;
                    self.z[1] = f64::INFINITY;
                    break;
                }
                let p = self.v[k as usize];
                let pf = p as f64;
                // Intersection of the parabolas rooted at p and q.
                let sx = ((f[q] + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf));
                if sx <= self.z[k as usize] {
                    k -= 1;
                    continue;
                }
                k += 1;
                self.v[k as usize] = q;
                self.z[k as usize] = sx;
                self.z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
        if k < 0 {
            out.fill(f64::INFINITY);
            return;
        }
        let mut j = 0usize;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while self.z[j + 1] < qf {
                j += 1;
            }
            let d = s * (qf - self.v[j] as f64);
            *o = d * d + f[self.v[j]];
        }
    }
}
