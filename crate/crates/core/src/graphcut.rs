//! Binary MRF regularization of a probability map by min-cut.
//!
//! The energy of a labeling `L` is
//!
//! ```text
//! E(L) = sum_i -ln p_i(L_i) + lambda * sum_{i~j} [L_i != L_j] exp(-(I_i - I_j)^2 / (2 sigma^2))
//! ```
//!
//! over 6-connected neighbor pairs, with probabilities clamped to
//! `[eps, 1 - eps]`. Scribbled voxels are fixed to their class by infinite
//! terminal capacities. The minimum is found exactly with the
//! Boykov-Kolmogorov augmenting-path algorithm, which reuses its search trees
//! between augmentations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Label, LabelMap, ProbMap, ScribbleSet, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphCutConfig {
    /// Weight of the pairwise term.
    pub lambda: f64,
    /// Intensity scale of the contrast-sensitive boundary term.
    pub sigma: f64,
    /// Probabilities are clamped to `[prob_floor, 1 - prob_floor]`.
    pub prob_floor: f64,
}

impl Default for GraphCutConfig {
    fn default() -> Self {
        GraphCutConfig {
            lambda: 2.5,
            sigma: 0.15,
            prob_floor: 1e-6,
        }
    }
}

impl GraphCutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 0.5) {
            return Err(Error::Config(format!("prob_floor must be in (0, 0.5), got {}", self.prob_floor)));
        }
        Ok(())
    }

    /// Costs of labeling a voxel `(background, foreground)`.
    pub fn unaries(&self, p: f32) -> (f64, f64) {
        let p = (p as f64).clamp(self.prob_floor, 1.0 - self.prob_floor);
        (-(1.0 - p).ln(), -p.ln())
    }

    /// Cost of a label change between neighbors of intensities `a` and `b`.
    pub fn pairwise(&self, a: f32, b: f32) -> f64 {
        let d = a as f64 - b as f64;
        self.lambda * (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// The `(+x, +y, +z)` neighbor of each voxel, so each 6-connected pair is
/// visited once.
fn forward_pairs(dims: Dims) -> impl Iterator<Item = (usize, usize)> {
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    (0..dims.len()).flat_map(move |i| {
        let x = i % nx;
        let y = (i / nx) % ny;
        let z = i / (nx * ny);
        [
            (x + 1 < nx).then_some(i + 1),
            (y + 1 < ny).then_some(i + nx),
            (z + 1 < nz).then_some(i + nx * ny),
        ]
        .into_iter()
        .flatten()
        .map(move |j| (i, j))
    })
}

/// The energy of `labels`; scribbles play no part.
pub fn energy_of(labels: &LabelMap, prob: &ProbMap, v: &Volume, cfg: &GraphCutConfig) -> Result<f64> {
    let dims = v.dims();
    dims.check_same(&labels.dims(), "labels")?;
    dims.check_same(&prob.dims(), "probability map")?;
    let mut e = 0.0;
    for (i, &p) in prob.prob().iter().enumerate() {
        let (bg, fg) = cfg.unaries(p);
        e += if labels.is_fg(i) { fg } else { bg };
    }
    let data = v.data();
    for (i, j) in forward_pairs(dims) {
        if labels.is_fg(i) != labels.is_fg(j) {
            e += cfg.pairwise(data[i], data[j]);
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCutResult {
    pub labels: LabelMap,
    /// Value of the maximum flow.
    pub flow: f64,
    /// `sum_i min(cost_bg_i, cost_fg_i)`, the part of the energy no cut can
    /// avoid. Without scribbles, `flow + offset` is the minimum energy.
    pub offset: f64,
}

/// The minimum-energy labeling with scribbles as hard constraints.
pub fn graphcut_refine(prob: &ProbMap, v: &Volume, s: &ScribbleSet, cfg: &GraphCutConfig) -> Result<LabelMap> {
    Ok(graphcut_solve(prob, v, s, cfg)?.labels)
}

/// [`graphcut_refine`] with the flow value and energy offset.
pub fn graphcut_solve(prob: &ProbMap, v: &Volume, s: &ScribbleSet, cfg: &GraphCutConfig) -> Result<GraphCutResult> {
    cfg.validate()?;
    let dims = v.dims();
    dims.check_same(&prob.dims(), "probability map")?;
    dims.check_same(&s.dims(), "scribbles")?;
    let mut net = GridFlowNetwork::new(dims);
    let mut offset = 0.0;
    for (i, &p) in prob.prob().iter().enumerate() {
        let (mut bg, mut fg) = cfg.unaries(p);
        match s.label_at(i) {
            Some(Label::Foreground) => bg = f64::INFINITY,
            Some(Label::Background) => fg = f64::INFINITY,
            None => {}
        }
        // Cutting the source link puts i on the background side.
        let m = bg.min(fg);
        offset += m;
        net.set_terminal(i, bg - m, fg - m);
    }
    if cfg.lambda > 0.0 {
        let data = v.data();
        for (i, j) in forward_pairs(dims) {
            net.set_pair(i, j, cfg.pairwise(data[i], data[j]));
        }
    }
    let flow = net.max_flow();
    let mut labels = LabelMap::with_spacing(
        dims,
        v.spacing(),
        (0..dims.len()).map(|i| net.is_source_side(i) as u8).collect(),
    )?;
    // Ties can leave a scribble on the wrong side only if its infinite
    // link were cut, which never happens; assert the contract anyway.
    for (i, label) in s.iter() {
        debug_assert_eq!(labels.label(i), label);
        labels.set(i, label);
    }
    Ok(GraphCutResult { labels, flow, offset })
}

const NONE: u8 = u8::MAX;
const TERMINAL: u8 = 6;
const FREE: u8 = 0;
const SOURCE: u8 = 1;
const SINK: u8 = 2;

/// A flow network on a 6-connected grid plus source and sink.
///
/// Directions are `+x, -x, +y, -y, +z, -z`; direction `d ^ 1` is the
/// reverse of `d`.
#[derive(Debug, Clone)]
pub struct GridFlowNetwork {
    dims: Dims,
    /// Neighbor in each direction, or `usize::MAX` at the border.
    nbr: Vec<usize>,
    /// Residual capacity of the arc from each voxel in each direction.
    cap: Vec<f64>,
    /// Positive: residual capacity from the source; negative: to the sink.
    term: Vec<f64>,
    tree: Vec<u8>,
    parent: Vec<u8>,
    ts: Vec<u64>,
    dist: Vec<u32>,
    active: Vec<bool>,
    flow: f64,
}

impl GridFlowNetwork {
    pub fn new(dims: Dims) -> Self {
        let n = dims.len();
        let mut nbr = vec![usize::MAX; 6 * n];
        for i in 0..n {
            let (x, y, z) = dims.coord_unchecked(i);
            let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
            for (d, step) in steps.into_iter().enumerate() {
                if let Some(j) = dims.offset((x, y, z), step) {
                    nbr[6 * i + d] = j;
                }
            }
        }
        GridFlowNetwork {
            dims,
            nbr,
            cap: vec![0.0; 6 * n],
            term: vec![0.0; n],
            tree: vec![FREE; n],
            parent: vec![NONE; n],
            ts: vec![0; n],
            dist: vec![0; n],
            active: vec![false; n],
            flow: 0.0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Sets the source and sink capacities of voxel `i`; flow that could pass
    /// straight from source to sink through `i` is counted immediately.
    pub fn set_terminal(&mut self, i: usize, from_source: f64, to_sink: f64) {
        assert!(from_source >= 0.0 && to_sink >= 0.0, "capacities must be non-negative");
        let direct = from_source.min(to_sink);
        if direct.is_finite() {
            self.flow += direct;
        }
        self.term[i] = if from_source >= to_sink {
            from_source - direct
        } else {
            -(to_sink - direct)
        };
    }

    /// Sets the capacity of both arcs between 6-neighbors `i` and `j`.
    pub fn set_pair(&mut self, i: usize, j: usize, capacity: f64) {
        assert!(capacity >= 0.0 && capacity.is_finite(), "capacity must be finite and non-negative");
        let d = (0..6).find(|&d| self.nbr[6 * i + d] == j).expect("voxels are not 6-neighbors");
        self.cap[6 * i + d] = capacity;
        self.cap[6 * j + (d ^ 1)] = capacity;
    }

    #[inline]
    fn neighbor(&self, i: usize, d: usize) -> Option<usize> {
        let j = self.nbr[6 * i + d];
        (j != usize::MAX).then_some(j)
    }

    pub fn is_source_side(&self, i: usize) -> bool {
        self.tree[i] == SOURCE
    }

    /// Runs the algorithm to completion and returns the total flow.
    pub fn max_flow(&mut self) -> f64 {
        let n = self.term.len();
        let mut queue = VecDeque::new();
        let mut orphans = VecDeque::new();
        for i in 0..n {
            if self.term[i] != 0.0 {
                self.tree[i] = if self.term[i] > 0.0 { SOURCE } else { SINK };
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.active[i] = true;
                queue.push_back(i);
            }
        }
        let mut time = 0u64;
        let mut current: Option<usize> = None;
        loop {
            let i = match current.take() {
                Some(i) => i,
                None => match queue.pop_front() {
                    Some(i) => {
                        if self.tree[i] == FREE || !self.active[i] {
                            self.active[i] = false;
                            continue;
                        }
                        i
                    }
                    None => break,
                },
            };
            let Some((s_node, d)) = self.grow(i, &mut queue) else {
                self.active[i] = false;
                continue;
            };
            time += 1;
            self.augment(s_node, d, &mut orphans);
            self.adopt(&mut orphans, &mut queue, time);
            if self.tree[i] != FREE {
                current = Some(i);
            } else {
                self.active[i] = false;
            }
        }
        self.flow
    }

    /// Extends the tree of `i` through its neighbors; returns the source-side
    /// end and direction of an arc joining the two trees, if one is found.
    fn grow(&mut self, i: usize, queue: &mut VecDeque<usize>) -> Option<(usize, usize)> {
        let t = self.tree[i];
        for d in 0..6 {
            let Some(j) = self.neighbor(i, d) else { continue };
            let residual = if t == SOURCE { self.cap[6 * i + d] } else { self.cap[6 * j + (d ^ 1)] };
            if residual <= 0.0 {
                continue;
            }
            match self.tree[j] {
                FREE => {
                    self.tree[j] = t;
                    self.parent[j] = (d ^ 1) as u8;
                    self.ts[j] = self.ts[i];
                    self.dist[j] = self.dist[i] + 1;
                    if !self.active[j] {
                        self.active[j] = true;
                        queue.push_back(j);
                    }
                }
                tj if tj != t => {
                    return Some(if t == SOURCE { (i, d) } else { (j, d ^ 1) });
                }
                _ => {}
            }
        }
        None
    }

    /// Pushes the bottleneck along source -> `s` -> (arc `d`) -> `t` -> sink.
    fn augment(&mut self, s: usize, d: usize, orphans: &mut VecDeque<usize>) {
        let t = self.nbr[6 * s + d];
        let mut b = self.cap[6 * s + d];
        let mut k = s;
        while self.parent[k] != TERMINAL {
            let pd = self.parent[k] as usize;
            let p = self.nbr[6 * k + pd];
            b = b.min(self.cap[6 * p + (pd ^ 1)]);
            k = p;
        }
        b = b.min(self.term[k]);
        let mut k = t;
        while self.parent[k] != TERMINAL {
            let pd = self.parent[k] as usize;
            b = b.min(self.cap[6 * k + pd]);
            k = self.nbr[6 * k + pd];
        }
        b = b.min(-self.term[k]);
        debug_assert!(b > 0.0 && b.is_finite());

        self.cap[6 * s + d] -= b;
        self.cap[6 * t + (d ^ 1)] += b;
        let mut k = s;
        while self.parent[k] != TERMINAL {
            let pd = self.parent[k] as usize;
            let p = self.nbr[6 * k + pd];
            self.cap[6 * p + (pd ^ 1)] -= b;
            self.cap[6 * k + pd] += b;
            if self.cap[6 * p + (pd ^ 1)] <= 0.0 {
                self.parent[k] = NONE;
                orphans.push_back(k);
            }
            k = p;
        }
        self.term[k] -= b;
        if self.term[k] <= 0.0 {
            self.parent[k] = NONE;
            orphans.push_back(k);
        }
        let mut k = t;
        while self.parent[k] != TERMINAL {
            let pd = self.parent[k] as usize;
            let p = self.nbr[6 * k + pd];
            self.cap[6 * k + pd] -= b;
            self.cap[6 * p + (pd ^ 1)] += b;
            if self.cap[6 * k + pd] <= 0.0 {
                self.parent[k] = NONE;
                orphans.push_back(k);
            }
            k = p;
        }
        self.term[k] += b;
        if self.term[k] >= 0.0 {
            self.parent[k] = NONE;
            orphans.push_back(k);
        }
        self.flow += b;
    }

    /// Distance from `j` to its terminal, or `None` if `j` hangs off an
    /// orphan. Caches results under timestamp `time`.
    fn origin_dist(&mut self, j: usize, time: u64) -> Option<u32> {
        let mut k = j;
        let mut steps = 0u32;
        let total = loop {
            if self.ts[k] == time {
                break steps + self.dist[k];
            }
            match self.parent[k] {
                NONE => return None,
                TERMINAL => {
                    self.ts[k] = time;
                    self.dist[k] = 1;
                    break steps + 1;
                }
                pd => {
                    k = self.nbr[6 * k + pd as usize];
                    steps += 1;
                }
            }
        };
        // Stamp the walked path with its now-known distances.
        let mut k = j;
        let mut dk = total;
        while self.ts[k] != time {
            self.ts[k] = time;
            self.dist[k] = dk;
            dk -= 1;
            k = self.nbr[6 * k + self.parent[k] as usize];
        }
        Some(total)
    }

    fn adopt(&mut self, orphans: &mut VecDeque<usize>, queue: &mut VecDeque<usize>, time: u64) {
        while let Some(i) = orphans.pop_front() {
            let t = self.tree[i];
            let mut best: Option<(u32, usize)> = None;
            for d in 0..6 {
                let Some(j) = self.neighbor(i, d) else { continue };
                if self.tree[j] != t {
                    continue;
                }
                let residual = if t == SOURCE { self.cap[6 * j + (d ^ 1)] } else { self.cap[6 * i + d] };
                if residual <= 0.0 {
                    continue;
                }
                if let Some(dj) = self.origin_dist(j, time) {
                    if best.map_or(true, |(bd, _)| dj < bd) {
                        best = Some((dj, d));
                    }
                }
            }
            if let Some((dj, d)) = best {
                self.parent[i] = d as u8;
                self.ts[i] = time;
                self.dist[i] = dj + 1;
                continue;
            }
            for d in 0..6 {
                let Some(j) = self.neighbor(i, d) else { continue };
                if self.tree[j] != t {
                    continue;
                }
                let residual = if t == SOURCE { self.cap[6 * j + (d ^ 1)] } else { self.cap[6 * i + d] };
                if residual > 0.0 && !self.active[j] {
                    self.active[j] = true;
                    queue.push_back(j);
                }
                let pj = self.parent[j];
                if pj != NONE && pj != TERMINAL && self.nbr[6 * j + pj as usize] == i {
                    self.parent[j] = NONE;
                    orphans.push_back(j);
                }
            }
            self.tree[i] = FREE;
            self.active[i] = false;
        }
    }
}
