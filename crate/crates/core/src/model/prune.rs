//! Probability-guided pruning of the initial segmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{Dims, Label, LabelMap, ProbMap};

/// Default minimum confidence for a label to be kept.
pub const DEFAULT_ZETA: f64 = 0.8;
/// Default rejection threshold on the per-voxel uniform draw.
pub const DEFAULT_ETA: f64 = 0.98;

/// The voxels of the initial segmentation that survived pruning, in
/// ascending index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedLabels {
    dims: Dims,
    kept: Vec<(usize, Label)>,
}

impl PrunedLabels {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kept(&self) -> &[(usize, Label)] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// A kept set chosen by the caller; indices must be in bounds and
    /// strictly increasing.
    pub fn from_kept(dims: Dims, kept: Vec<(usize, Label)>) -> Result<Self> {
        if let Some(&(index, _)) = kept.iter().find(|&&(i, _)| i >= dims.len()) {
            return Err(Error::IndexOutOfBounds { index, len: dims.len() });
        }
        if kept.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Validation("kept indices must be strictly increasing".into()));
        }
        Ok(PrunedLabels { dims, kept })
    }

    /// Keeps every voxel of `c`, for callers that want no pruning.
    pub fn all(c: &LabelMap) -> Self {
        PrunedLabels {
            dims: c.dims(),
            kept: (0..c.dims().len()).map(|i| (i, c.label(i))).collect(),
        }
    }
}

/// Keeps voxel `i` iff `max(p_i, 1 - p_i) >= zeta` and `u_i >= eta`, where
/// `u_i` is drawn uniformly from `[0, 1)`.
///
/// One draw is made per voxel in index order whether or not the voxel is
/// confident, so the kept set for a seed does not depend on the probability
/// map beyond the confidence test.
pub fn prune_labels(c: &LabelMap, p: &ProbMap, zeta: f64, eta: f64, rng: &mut impl Rng) -> Result<PrunedLabels> {
    for (name, v) in [("zeta", zeta), ("eta", eta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    c.dims().check_same(&p.dims(), "probability map")?;
    let mut kept = Vec::new();
    for (i, &pi) in p.prob().iter().enumerate() {
        let u: f64 = rng.random();
        let pi = pi as f64;
        let conf = pi.max(1.0 - pi);
        if conf >= zeta && u >= eta {
            kept.push((i, c.label(i)));
        }
    }
    Ok(PrunedLabels { dims: c.dims(), kept })
}
