//! Intensity-geodesic distance to a seed set and the exponential weight map
//! derived from it.
//!
//! The distance between neighboring voxels `i` and `j` is
//! `|I(i) - I(j)| + nu * |x(i) - x(j)|`, where `nu` is
//! [`GeodesicConfig::spatial_weight`] and the spatial step is measured in mm.
//! With `nu = 0` a path's cost is its accumulated intensity change, so seeds
//! reach far through homogeneous regions and stop at edges.
//!
//! [`geodesic_distance`] is a raster-scan approximation. One pass runs eight
//! sweeps: the four octant orderings with z ascending, each followed by its
//! reverse. A voxel relaxes from the half of its neighborhood already visited
//! in the current sweep. The result can only overestimate the true shortest
//! path. [`geodesic_distance_exact`] runs Dijkstra on the identical graph and
//! serves as the reference.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Connectivity, Dims, Volume};

/// Largest grid the exact solver accepts (64^3).
pub const EXACT_SOLVER_LIMIT: usize = 64 * 64 * 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicConfig {
    /// Temperature of the weight map, `W = exp(-D / tau)`.
    pub tau: f64,
    pub connectivity: Connectivity,
    /// Number of raster passes (eight sweeps each).
    pub passes: usize,
    /// Cost per mm of path length, added to the intensity term.
    pub spatial_weight: f64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig {
            tau: 0.3,
            connectivity: Connectivity::TwentySix,
            passes: 4,
            spatial_weight: 0.0,
        }
    }
}

impl GeodesicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.passes == 0 {
            return Err(Error::Config("passes must be at least 1".into()));
        }
        if !(self.spatial_weight.is_finite() && self.spatial_weight >= 0.0) {
            return Err(Error::Config(format!(
                "spatial weight must be non-negative, got {}",
                self.spatial_weight
            )));
        }
        Ok(())
    }
}

/// Per-voxel geodesic distance; `f64::INFINITY` where no seed is reachable.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    dims: Dims,
    dist: Vec<f64>,
}

impl DistanceMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.dist.iter().map(|&d| d as f32).collect()
    }
}

/// Per-voxel weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    dims: Dims,
    w: Vec<f64>,
}

impl WeightMap {
    /// All zeros: the weight map of an empty seed set.
    pub fn zeros(dims: Dims) -> Self {
        WeightMap {
            dims,
            w: vec![0.0; dims.len()],
        }
    }

    /// Wraps precomputed weights, which must lie in `[0, 1]`.
    pub fn from_weights(dims: Dims, w: Vec<f64>) -> Result<Self> {
        if w.len() != dims.len() {
            return Err(Error::DimsMismatch(format!("{} weights for {} voxels", w.len(), dims.len())));
        }
        if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Validation(format!("weight {bad} outside [0, 1]")));
        }
        Ok(WeightMap { dims, w })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.w[index]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.w.iter().map(|&w| w as f32).collect()
    }
}

/// A neighbor displacement with its spatial length.
#[derive(Clone, Copy)]
struct Step {
    d: (isize, isize, isize),
    len: f64,
}

fn steps(v: &Volume, conn: Connectivity) -> Vec<Step> {
    let [sx, sy, sz] = v.spacing().as_array();
    conn.offsets()
        .into_iter()
        .map(|d| {
            let (dx, dy, dz) = (d.0 as f64 * sx, d.1 as f64 * sy, d.2 as f64 * sz);
            Step {
                d,
                len: (dx * dx + dy * dy + dz * dz).sqrt(),
            }
        })
        .collect()
}

fn seed_map(dims: Dims, seeds: &[usize]) -> Result<Vec<f64>> {
    let mut dist = vec![f64::INFINITY; dims.len()];
    for &s in seeds {
        if s >= dims.len() {
            return Err(Error::IndexOutOfBounds {
                index: s,
                len: dims.len(),
            });
        }
        dist[s] = 0.0;
    }
    Ok(dist)
}

/// Raster-scan geodesic distance from `seeds` (linear voxel indices).
pub fn geodesic_distance(v: &Volume, seeds: &[usize], cfg: &GeodesicConfig) -> Result<DistanceMap> {
    cfg.validate()?;
    let dims = v.dims();
    let mut dist = seed_map(dims, seeds)?;
    if seeds.is_empty() {
        return Ok(DistanceMap { dims, dist });
    }
    let all = steps(v, cfg.connectivity);
    let img = v.data();
    let nu = cfg.spatial_weight;

    for _ in 0..cfg.passes {
        for dir in SWEEP_DIRECTIONS {
            for dir in [dir, (-dir.0, -dir.1, -dir.2)] {
                sweep(&mut dist, img, dims, &all, nu, dir);
            }
        }
    }
    Ok(DistanceMap { dims, dist })
}

/// Sweep orderings of one pass; each is run forward and then reversed.
const SWEEP_DIRECTIONS: [(isize, isize, isize); 4] = [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (-1, -1, 1)];

/// One raster sweep. `dir` gives the traversal sign along x, y and z; each
/// voxel relaxes from the neighbors the sweep has already visited.
fn sweep(dist: &mut [f64], img: &[f32], dims: Dims, all: &[Step], nu: f64, dir: (isize, isize, isize)) {
    let visited: Vec<Step> = all
        .iter()
        .copied()
        .filter(|s| (s.d.2 * dir.2, s.d.1 * dir.1, s.d.0 * dir.0) < (0, 0, 0))
        .collect();
    let order = |n: usize, sign: isize| -> Box<dyn Iterator<Item = usize>> {
        if sign > 0 {
            Box::new(0..n)
        } else {
            Box::new((0..n).rev())
        }
    };
    for z in order(dims.nz, dir.2) {
        for y in order(dims.ny, dir.1) {
            for x in order(dims.nx, dir.0) {
                let i = dims.index_unchecked(x, y, z);
                let here = img[i] as f64;
                let mut best = dist[i];
                for s in &visited {
                    if let Some(j) = dims.offset((x, y, z), s.d) {
                        let dj = dist[j];
                        if dj < best {
                            let cand = dj + (here - img[j] as f64).abs() + nu * s.len;
                            if cand < best {
                                best = cand;
                            }
                        }
                    }
                }
                dist[i] = best;
            }
        }
    }
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties by index.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact multi-seed shortest paths (Dijkstra) on the same graph as
/// [`geodesic_distance`]. Limited to [`EXACT_SOLVER_LIMIT`] voxels.
pub fn geodesic_distance_exact(v: &Volume, seeds: &[usize], cfg: &GeodesicConfig) -> Result<DistanceMap> {
    cfg.validate()?;
    let dims = v.dims();
    if dims.len() > EXACT_SOLVER_LIMIT {
        return Err(Error::GridTooLarge {
            voxels: dims.len(),
            limit: EXACT_SOLVER_LIMIT,
        });
    }
    let mut dist = seed_map(dims, seeds)?;
    let all = steps(v, cfg.connectivity);
    let img = v.data();
    let mut done = vec![false; dims.len()];
    let mut heap: BinaryHeap<Entry> = seeds.iter().map(|&index| Entry { dist: 0.0, index }).collect();

    while let Some(Entry { dist: d, index: i }) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        let c = dims.coord_unchecked(i);
        let here = img[i] as f64;
        for s in &all {
            if let Some(j) = dims.offset(c, s.d) {
                if done[j] {
                    continue;
                }
                let cand = d + (here - img[j] as f64).abs() + cfg.spatial_weight * s.len;
                if cand < dist[j] {
                    dist[j] = cand;
                    heap.push(Entry { dist: cand, index: j });
                }
            }
        }
    }
    Ok(DistanceMap { dims, dist })
}

/// `W = exp(-D / tau)`, with `exp(-inf) = 0` exactly.
pub fn weights_from_distance(d: &DistanceMap, tau: f64) -> Result<WeightMap> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let w = d
        .dist
        .iter()
        .map(|&x| if x.is_infinite() { 0.0 } else { (-x / tau).exp() })
        .collect();
    Ok(WeightMap { dims: d.dims, w })
}
