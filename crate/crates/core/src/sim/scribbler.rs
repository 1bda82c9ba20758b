use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::connected_components;
use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::volume::{Label, LabelMap, ScribbleSet, Spacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScribblerConfig {
    /// Error components corrected per call.
    pub max_per_round: usize,
    /// Smaller error components are ignored.
    pub min_component: usize,
    /// Inclusive range of stroke lengths in voxels.
    pub length: (usize, usize),
    pub seed: u64,
}

impl Default for ScribblerConfig {
    fn default() -> Self {
        ScribblerConfig {
            max_per_round: 4,
            min_component: 10,
            length: (3, 10),
            seed: 0,
        }
    }
}

impl ScribblerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad stroke length range {:?}", self.length)));
        }
        Ok(())
    }
}

/// Scribbles that correct the largest mistakes of `pred`.
///
/// Missed foreground and spurious foreground are separate error components
/// (6-connected). Components of at least `min_component` voxels are taken
/// largest first (ties by first voxel); each gets one axis-aligned stroke
/// through its deepest voxel, labeled with the true class and clipped to the
/// component. Voxels already in `existing` are never reused.
///
/// Stroke lengths are drawn from a generator seeded by `cfg.seed` and the
/// size of `existing`, so repeated rounds differ but replay identically.
pub fn synthesize_scribbles(
    pred: &LabelMap,
    gt: &LabelMap,
    cfg: &ScribblerConfig,
    existing: &ScribbleSet,
) -> Result<ScribbleSet> {
    cfg.validate()?;
    let dims = pred.dims();
    dims.check_same(&gt.dims(), "ground truth")?;
    dims.check_same(&existing.dims(), "scribbles")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (existing.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));

    let mut comps: Vec<(Label, Vec<usize>)> = Vec::new();
    for label in [Label::Foreground, Label::Background] {
        let wrong: Vec<bool> = (0..dims.len())
            .map(|i| gt.label(i) == label && pred.label(i) != label)
            .collect();
        comps.extend(connected_components(&wrong, dims).into_iter().map(|c| (label, c)));
    }
    comps.retain(|(_, c)| c.len() >= cfg.min_component);
    comps.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])));

    let mut out = ScribbleSet::new(dims);
    let mut done = 0;
    for (label, comp) in comps {
        if done == cfg.max_per_round {
            break;
        }
        let mut inside = vec![false; dims.len()];
        for &i in &comp {
            inside[i] = true;
        }
        let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
        let depth = squared_edt(&outside, dims, Spacing::unit());
        let free = |i: usize| inside[i] && !existing.contains(i);
        // Deepest unscribbled voxel, lowest index on ties.
        let Some(anchor) = comp
            .iter()
            .copied()
            .filter(|&i| free(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if depth[b] >= depth[i] => Some(b),
                _ => Some(i),
            })
        else {
            continue;
        };

        let target = rng.random_range(cfg.length.0..=cfg.length.1);
        let c = dims.coord_unchecked(anchor);
        let axes = [(1isize, 0isize, 0isize), (0, 1, 0), (0, 0, 1)];
        // Free voxels reachable along each axis, nearest first, up to target.
        let reach = |step: (isize, isize, isize), sign: isize| {
            let mut run = Vec::new();
            let mut k = 1;
            while run.len() < target {
                match dims.offset(c, (sign * k * step.0, sign * k * step.1, sign * k * step.2)) {
                    Some(j) if free(j) => run.push(j),
                    _ => break,
                }
                k += 1;
            }
            run
        };
        let runs: Vec<(Vec<usize>, Vec<usize>)> = axes.iter().map(|&a| (reach(a, 1), reach(a, -1))).collect();
        let (fwd, back) = runs
            .iter()
            .enumerate()
            .max_by_key(|(k, (f, b))| ((f.len() + b.len()).min(target), std::cmp::Reverse(*k)))
            .map(|(_, r)| r)
            .expect("three axes");
        // Grow outward from the anchor, alternating sides.
        let mut stroke = vec![anchor];
        let (mut fi, mut bi) = (0, 0);
        while stroke.len() < target && (fi < fwd.len() || bi < back.len()) {
            if fi < fwd.len() && (fi <= bi || bi == back.len()) {
                stroke.push(fwd[fi]);
                fi += 1;
            } else {
                stroke.push(back[bi]);
                bi += 1;
            }
        }
        for i in stroke {
            out.add(i, label)?;
        }
        done += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn perfect_prediction_needs_nothing() {
        let d = Dims::cube(8).unwrap();
        let gt = LabelMap::from_fn(d, |i| i % 3 == 0);
        let s = synthesize_scribbles(&gt, &gt, &ScribblerConfig::default(), &ScribbleSet::new(d)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn missed_cube_gets_one_foreground_stroke() {
        let d = Dims::cube(12).unwrap();
        let in_cube = |i: usize| {
            let (x, y, z) = d.coord_unchecked(i);
            (3..8).contains(&x) && (4..9).contains(&y) && (2..7).contains(&z)
        };
        let gt = LabelMap::from_fn(d, in_cube);
        let pred = LabelMap::background(d);
        let s = synthesize_scribbles(&pred, &gt, &ScribblerConfig::default(), &ScribbleSet::new(d)).unwrap();
        assert!(s.background().is_empty());
        assert!((3..=10).contains(&s.foreground().len()), "{}", s.len());
        assert!(s.foreground().iter().all(|&i| in_cube(i)));
        // The stroke passes through the cube center.
        assert!(s.contains(d.index_unchecked(5, 6, 4)));
        // A second call avoids what is already there.
        let more = synthesize_scribbles(&pred, &gt, &ScribblerConfig::default(), &s).unwrap();
        assert!(!more.is_empty());
        assert!(more.iter().all(|(i, _)| !s.contains(i) && in_cube(i)));
    }

    #[test]
    fn small_components_are_ignored() {
        let d = Dims::cube(8).unwrap();
        let gt = LabelMap::from_fn(d, |i| i < 9);
        let pred = LabelMap::background(d);
        let s = synthesize_scribbles(&pred, &gt, &ScribblerConfig::default(), &ScribbleSet::new(d)).unwrap();
        assert!(s.is_empty());
    }
}
