use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMap, Spacing, Volume};

/// Attempts at placing each blob before giving up.
const PLACEMENT_TRIES: usize = 200;

/// Bright ellipsoids on a darker noisy background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub blobs: usize,
    /// Semi-axis range in voxels; each axis is drawn independently.
    pub radius: (f64, f64),
    /// Intensity step between background and blobs.
    pub contrast: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims { nx: 32, ny: 32, nz: 32 },
            blobs: 1,
            radius: (6.0, 10.0),
            contrast: 0.6,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad radius range {:?}", self.radius)));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::Config(format!("contrast must be in (0, 1], got {}", self.contrast)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }

    /// Whether blobs stand out clearly from the noise.
    pub fn well_separated(&self) -> bool {
        self.contrast > 2.0 * self.noise_std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub ground_truth: LabelMap,
}

/// Voxels of an axis-aligned ellipsoid, or `None` if it leaves the grid
/// (one voxel of margin is kept on every side).
pub(crate) fn ellipsoid(dims: Dims, center: [f64; 3], radii: [f64; 3]) -> Option<Vec<usize>> {
    let n = [dims.nx, dims.ny, dims.nz];
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = (center[a] - radii[a]).floor();
        let h = (center[a] + radii[a]).ceil();
        if l < 1.0 || h > (n[a] as f64 - 2.0) {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let mut out = Vec::new();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let q: f64 = [x, y, z]
                    .iter()
                    .enumerate()
                    .map(|(a, &c)| ((c as f64 - center[a]) / radii[a]).powi(2))
                    .sum();
                if q <= 1.0 {
                    out.push(dims.index_unchecked(x, y, z));
                }
            }
        }
    }
    Some(out)
}

/// Places `count` ellipsoids that neither touch each other nor any voxel in
/// `taken` (6-neighborhoods included). Centers sit on voxel centers.
pub(crate) fn place_blobs(
    dims: Dims,
    count: usize,
    radius: (f64, f64),
    taken: &mut [bool],
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
    let n = [dims.nx, dims.ny, dims.nz];
    let mut blobs = Vec::with_capacity(count);
    for b in 0..count {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let radii = [0, 1, 2].map(|_| rng.random_range(radius.0..=radius.1));
            let center = [0, 1, 2].map(|a| rng.random_range(0..n[a]) as f64);
            let Some(vox) = ellipsoid(dims, center, radii) else { continue };
            let clash = vox.iter().any(|&i| {
                taken[i] || steps.iter().any(|&s| dims.offset(dims.coord_unchecked(i), s).is_some_and(|j| taken[j]))
            });
            if !clash && !vox.is_empty() {
                placed = Some(vox);
                break;
            }
        }
        let vox = placed.ok_or_else(|| {
            Error::Validation(format!("could not place blob {} of {count} in a {n:?} grid", b + 1))
        })?;
        for &i in &vox {
            taken[i] = true;
        }
        blobs.push(vox);
    }
    Ok(blobs)
}

/// A noisy volume with `spec.blobs` bright ellipsoids and its ground truth.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut fg = vec![false; dims.len()];
    place_blobs(dims, spec.blobs, spec.radius, &mut fg, &mut rng)?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let (dark, bright) = (0.5 - spec.contrast / 2.0, 0.5 + spec.contrast / 2.0);
    let data = fg
        .iter()
        .map(|&f| ((if f { bright } else { dark }) + noise.sample(&mut rng)) as f32)
        .collect();
    Ok(Phantom {
        volume: Volume::new(dims, Spacing::unit(), data)?,
        ground_truth: LabelMap::new(dims, fg.iter().map(|&f| f as u8).collect())?,
    })
}
