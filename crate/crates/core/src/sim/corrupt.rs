use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::connected_components;
use super::phantom::place_blobs;
use crate::distance::signed_distance;
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::volume::{LabelMap, ProbMap, Spacing};

/// How to damage a ground-truth mask into a plausible automatic
/// segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Mean boundary displacement in voxels; positive grows the mask.
    pub bias: f64,
    /// Peak smooth variation of the displacement around `bias`, in voxels.
    pub amplitude: f64,
    /// Wavelength of the displacement field in voxels.
    pub wavelength: f64,
    /// Chance that each ground-truth component is missed entirely.
    pub drop_prob: f64,
    /// Spurious blobs added away from the ground truth.
    pub fp_blobs: usize,
    pub fp_radius: (f64, f64),
    /// Logistic temperature, in voxels, mapping signed distance to the
    /// corrupted boundary onto probability. Larger is softer.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec::identity()
    }
}

impl CorruptionSpec {
    /// Leaves the mask untouched.
    pub fn identity() -> Self {
        CorruptionSpec {
            bias: 0.0,
            amplitude: 0.0,
            wavelength: 16.0,
            drop_prob: 0.0,
            fp_blobs: 0,
            fp_radius: (2.0, 4.0),
            temperature: 1.5,
            seed: 0,
        }
    }

    /// Damage that takes the default single-blob phantom to a Dice of about
    /// 0.5 to 0.7.
    pub fn calibrated(seed: u64) -> Self {
        CorruptionSpec {
            bias: -2.1,
            amplitude: 1.0,
            wavelength: 16.0,
            drop_prob: 0.0,
            fp_blobs: 1,
            fp_radius: (2.5, 4.0),
            temperature: 1.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.bias.is_finite() && self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("bad displacement bias {} / amplitude {}", self.bias, self.amplitude));
        }
        if self.wavelength.is_nan() || self.wavelength <= 0.0 {
            return bad(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob must be in [0, 1], got {}", self.drop_prob));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub seg: LabelMap,
    pub prob: ProbMap,
    /// Dice of `seg` against the ground truth.
    pub dice: f64,
}

/// Drops components, moves the boundary by a smooth random displacement,
/// adds spurious blobs, then derives probabilities from the distance to the
/// new boundary (confident far from it, near 0.5 on it).
pub fn corrupt_segmentation(gt: &LabelMap, spec: &CorruptionSpec) -> Result<Corrupted> {
    spec.validate()?;
    let dims = gt.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut kept: Vec<bool> = gt.labels().iter().map(|&l| l == 1).collect();
    for comp in connected_components(&kept.clone(), dims) {
        if rng.random_bool(spec.drop_prob) {
            for i in comp {
                kept[i] = false;
            }
        }
    }

    // Sum of three plane waves of random direction and phase, in [-1, 1].
    let k = 2.0 * std::f64::consts::PI / spec.wavelength;
    let waves: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let dir = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0f64));
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-9);
            (dir.map(|d| k * d / norm), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let sd = signed_distance(&kept, dims, Spacing::unit());
    let mut seg: Vec<bool> = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coord_unchecked(i);
            let field: f64 = waves
                .iter()
                .map(|(w, phase)| (w[0] * x as f64 + w[1] * y as f64 + w[2] * z as f64 + phase).sin())
                .sum::<f64>()
                / 3.0;
            // Inside voxels have sd <= -1 and outside ones sd >= 1, so a zero
            // displacement reproduces the mask exactly.
            sd[i] < spec.bias + spec.amplitude * field
        })
        .collect();

    if spec.fp_blobs > 0 {
        // Keep spurious blobs clear of the true mask by a margin.
        let gt_sd = signed_distance(&gt.labels().iter().map(|&l| l == 1).collect::<Vec<_>>(), dims, Spacing::unit());
        let mut taken: Vec<bool> = gt_sd.iter().map(|&d| d < 3.0).collect();
        let blobs = place_blobs(dims, spec.fp_blobs, spec.fp_radius, &mut taken, &mut rng).map_err(|_| {
            Error::Validation(format!(
                "no room for {} spurious blob(s) clear of the ground truth",
                spec.fp_blobs
            ))
        })?;
        for blob in blobs {
            for i in blob {
                seg[i] = true;
            }
        }
    }

    let sd_seg = signed_distance(&seg, dims, Spacing::unit());
    let prob = sd_seg
        .iter()
        .map(|&d| (1.0 / (1.0 + (d / spec.temperature).exp())) as f32)
        .collect();
    let seg = LabelMap::with_spacing(dims, gt.spacing(), seg.iter().map(|&b| b as u8).collect())?;
    let prob = ProbMap::with_spacing(dims, gt.spacing(), prob)?;
    let dice = dice(gt, &seg)?;
    Ok(Corrupted { seg, prob, dice })
}
