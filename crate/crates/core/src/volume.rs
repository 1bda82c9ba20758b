//! Dense 3D grids and the label/probability/scribble containers built on them.
//!
//! Every grid uses the same x-fastest layout: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. All other modules go through [`Dims`] for index
//! arithmetic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Validation(format!(
                "dims must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        Ok(Dims { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Dims::new(n, n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.nx && y < self.ny && z < self.nz
    }

    /// Linear index of `(x, y, z)`, checked.
    pub fn linear_index(&self, (x, y, z): (usize, usize, usize)) -> Result<usize> {
        if !self.contains(x, y, z) {
            return Err(Error::OutOfBounds {
                x,
                y,
                z,
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            });
        }
        Ok(self.index_unchecked(x, y, z))
    }

    #[inline]
    pub fn index_unchecked(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`Dims::linear_index`].
    pub fn coord_of(&self, index: usize) -> Result<(usize, usize, usize)> {
        if index >= self.len() {
            return Err(Error::IndexOutOfBounds {
                index,
                len: self.len(),
            });
        }
        Ok(self.coord_unchecked(index))
    }

    #[inline]
    pub fn coord_unchecked(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    /// Index of the neighbor of `(x, y, z)` displaced by `(dx, dy, dz)`, if
    /// it lies inside the grid.
    #[inline]
    pub fn offset(&self, (x, y, z): (usize, usize, usize), (dx, dy, dz): (isize, isize, isize)) -> Option<usize> {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        let nz = z as isize + dz;
        if nx < 0 || ny < 0 || nz < 0 {
            return None;
        }
        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
        self.contains(nx, ny, nz)
            .then(|| self.index_unchecked(nx, ny, nz))
    }

    pub fn check_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimsMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.nx, self.ny, self.nz, other.nx, other.ny, other.nz
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`Dims::linear_index`].
pub fn linear_index(coord: (usize, usize, usize), dims: Dims) -> Result<usize> {
    dims.linear_index(coord)
}

/// Free-function form of [`Dims::coord_of`].
pub fn coord_of(index: usize, dims: Dims) -> Result<(usize, usize, usize)> {
    dims.coord_of(index)
}

/// Neighborhood used by grid algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    /// All neighbor displacements, in a fixed order.
    pub fn offsets(self) -> Vec<(isize, isize, isize)> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }

    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Config(format!(
                "connectivity must be 6 or 26, got {other}"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

/// Physical voxel size in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        for s in [sx, sy, sz] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation(format!(
                    "spacing must be finite and positive, got ({sx}, {sy}, {sz})"
                )));
            }
        }
        Ok(Spacing { sx, sy, sz })
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Spacing::new(s, s, s)
    }

    pub fn unit() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::unit()
    }
}

/// A 3D scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
    range: (f32, f32),
}

impl Volume {
    /// Wraps `data` after checking its length and that every value is finite.
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "volume data has {} values, dims need {}",
                data.len(),
                dims.len()
            )));
        }
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite intensity {v} at voxel {i}"
                )));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(Volume {
            dims,
            spacing,
            data,
            range: (lo, hi),
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Volume::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Cached `(min, max)` of the data.
    pub fn intensity_range(&self) -> (f32, f32) {
        self.range
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index_unchecked(x, y, z)]
    }

    /// Affine rescale to `[0, 1]`. A constant volume maps to all zeros.
    pub fn normalized(&self) -> Volume {
        let (lo, hi) = self.range;
        let data: Vec<f32> = if hi > lo {
            let lo = lo as f64;
            let scale = 1.0 / (hi as f64 - lo);
            self.data
                .iter()
                .map(|&v| (((v as f64 - lo) * scale) as f32).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; self.data.len()]
        };
        let range = if hi > lo { (0.0, 1.0) } else { (0.0, 0.0) };
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data,
            range,
        }
    }
}

/// Free-function form of [`Volume::normalized`].
pub fn normalize_volume(v: &Volume) -> Volume {
    v.normalized()
}

/// Binary voxel class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Background = 0,
    Foreground = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Foreground),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_foreground(self) -> bool {
        self == Label::Foreground
    }

    pub fn other(self) -> Label {
        match self {
            Label::Background => Label::Foreground,
            Label::Foreground => Label::Background,
        }
    }
}

/// Per-voxel binary labels; values are always 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        LabelMap::with_spacing(dims, Spacing::unit(), labels)
    }

    pub fn with_spacing(dims: Dims, spacing: Spacing, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "label map has {} values, dims need {}",
                labels.len(),
                dims.len()
            )));
        }
        if let Some((i, &v)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::Validation(format!(
                "label value {v} at voxel {i} is not 0 or 1"
            )));
        }
        Ok(LabelMap {
            dims,
            spacing,
            labels,
        })
    }

    pub fn background(dims: Dims) -> Self {
        LabelMap {
            dims,
            spacing: Spacing::unit(),
            labels: vec![0; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize) -> bool) -> Self {
        LabelMap {
            dims,
            spacing: Spacing::unit(),
            labels: (0..dims.len()).map(|i| f(i) as u8).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: Spacing) {
        self.spacing = spacing;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn is_fg(&self, index: usize) -> bool {
        self.labels[index] == 1
    }

    #[inline]
    pub fn label(&self, index: usize) -> Label {
        if self.labels[index] == 1 {
            Label::Foreground
        } else {
            Label::Background
        }
    }

    pub fn set(&mut self, index: usize, label: Label) {
        self.labels[index] = label.as_u8();
    }

    pub fn count_foreground(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    /// Number of voxels where the two maps disagree.
    pub fn count_changed(&self, other: &LabelMap) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Per-voxel foreground probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: Dims,
    spacing: Spacing,
    prob: Vec<f32>,
}

impl ProbMap {
    pub fn new(dims: Dims, prob: Vec<f32>) -> Result<Self> {
        ProbMap::with_spacing(dims, Spacing::unit(), prob)
    }

    pub fn with_spacing(dims: Dims, spacing: Spacing, prob: Vec<f32>) -> Result<Self> {
        if prob.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "probability map has {} values, dims need {}",
                prob.len(),
                dims.len()
            )));
        }
        if let Some((i, &p)) = prob
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::Validation(format!(
                "probability {p} at voxel {i} is outside [0, 1]"
            )));
        }
        Ok(ProbMap {
            dims,
            spacing,
            prob,
        })
    }

    pub fn uniform(dims: Dims, p: f32) -> Result<Self> {
        ProbMap::new(dims, vec![p; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: Spacing) {
        self.spacing = spacing;
    }

    pub fn prob(&self) -> &[f32] {
        &self.prob
    }

    /// Foreground wherever `p >= 0.5`.
    pub fn argmax(&self) -> LabelMap {
        LabelMap {
            dims: self.dims,
            spacing: self.spacing,
            labels: self.prob.iter().map(|&p| (p >= 0.5) as u8).collect(),
        }
    }
}

/// User corrections: two disjoint voxel sets.
///
/// Adding a voxel to one class removes it from the other, so the sets stay
/// disjoint whatever order the edits arrive in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleSet {
    dims: Dims,
    foreground: BTreeSet<usize>,
    background: BTreeSet<usize>,
}

impl ScribbleSet {
    pub fn new(dims: Dims) -> Self {
        ScribbleSet {
            dims,
            foreground: BTreeSet::new(),
            background: BTreeSet::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Marks `index` with `label`, replacing any earlier mark there.
    pub fn add(&mut self, index: usize, label: Label) -> Result<()> {
        if index >= self.dims.len() {
            return Err(Error::IndexOutOfBounds {
                index,
                len: self.dims.len(),
            });
        }
        match label {
            Label::Foreground => {
                self.background.remove(&index);
                self.foreground.insert(index);
            }
            Label::Background => {
                self.foreground.remove(&index);
                self.background.insert(index);
            }
        }
        Ok(())
    }

    pub fn add_coord(&mut self, coord: (usize, usize, usize), label: Label) -> Result<()> {
        let i = self.dims.linear_index(coord)?;
        self.add(i, label)
    }

    /// Removes any mark at `index`; returns whether one existed.
    pub fn remove(&mut self, index: usize) -> bool {
        self.foreground.remove(&index) | self.background.remove(&index)
    }

    /// Adds every mark from `other`, later marks winning.
    pub fn merge(&mut self, other: &ScribbleSet) -> Result<()> {
        self.dims.check_same(&other.dims, "scribble merge")?;
        for (i, label) in other.iter() {
            self.add(i, label)?;
        }
        Ok(())
    }

    pub fn label_at(&self, index: usize) -> Option<Label> {
        if self.foreground.contains(&index) {
            Some(Label::Foreground)
        } else if self.background.contains(&index) {
            Some(Label::Background)
        } else {
            None
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.label_at(index).is_some()
    }

    pub fn foreground(&self) -> &BTreeSet<usize> {
        &self.foreground
    }

    pub fn background(&self) -> &BTreeSet<usize> {
        &self.background
    }

    pub fn len(&self) -> usize {
        self.foreground.len() + self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All marks in ascending voxel order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Label)> + '_ {
        let mut fg = self.foreground.iter().peekable();
        let mut bg = self.background.iter().peekable();
        std::iter::from_fn(move || match (fg.peek(), bg.peek()) {
            (Some(&&f), Some(&&b)) => {
                if f < b {
                    fg.next();
                    Some((f, Label::Foreground))
                } else {
                    bg.next();
                    Some((b, Label::Background))
                }
            }
            (Some(&&f), None) => {
                fg.next();
                Some((f, Label::Foreground))
            }
            (None, Some(&&b)) => {
                bg.next();
                Some((b, Label::Background))
            }
            (None, None) => None,
        })
    }

    /// Voxel indices of both classes, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.iter().map(|(i, _)| i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_examples() {
        let d = Dims::cube(4).unwrap();
        assert_eq!(d.linear_index((0, 0, 0)).unwrap(), 0);
        assert_eq!(d.linear_index((1, 2, 3)).unwrap(), 57);
        assert!(matches!(
            d.linear_index((4, 0, 0)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(d.coord_of(64).is_err());
    }

    #[test]
    fn linear_index_round_trip_exhaustive() {
        for dims in [Dims::cube(3).unwrap(), Dims::new(2, 5, 3).unwrap()] {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let i = linear_index((x, y, z), dims).unwrap();
                        assert_eq!(coord_of(i, dims).unwrap(), (x, y, z));
                    }
                }
            }
            for i in 0..dims.len() {
                assert_eq!(linear_index(coord_of(i, dims).unwrap(), dims).unwrap(), i);
            }
        }
    }

    fn vol(values: &[f32]) -> Volume {
        Volume::new(
            Dims::new(values.len(), 1, 1).unwrap(),
            Spacing::unit(),
            values.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(vol(&[0.0, 50.0, 100.0]).normalized().data(), &[0.0, 0.5, 1.0]);
        assert_eq!(vol(&[7.0, 7.0, 7.0]).normalized().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(
            vol(&[-100.0, 0.0, 300.0]).normalized().data(),
            &[0.0, 0.25, 1.0]
        );
    }

    #[test]
    fn volume_rejects_non_finite_and_caches_range() {
        let d = Dims::new(2, 1, 1).unwrap();
        assert!(Volume::new(d, Spacing::unit(), vec![0.0, f32::NAN]).is_err());
        assert!(Volume::new(d, Spacing::unit(), vec![0.0]).is_err());
        assert_eq!(vol(&[3.0, -2.0, 5.0]).intensity_range(), (-2.0, 5.0));
    }

    #[test]
    fn scribbles_last_write_wins() {
        let mut s = ScribbleSet::new(Dims::cube(2).unwrap());
        s.add(3, Label::Background).unwrap();
        s.add(3, Label::Foreground).unwrap();
        assert_eq!(s.label_at(3), Some(Label::Foreground));
        assert!(s.background().is_empty());
        s.add(3, Label::Background).unwrap();
        assert_eq!(s.label_at(3), Some(Label::Background));
        assert!(s.foreground().is_empty());
        assert!(s.add(8, Label::Foreground).is_err());
    }

    #[test]
    fn scribble_iter_is_sorted() {
        let mut s = ScribbleSet::new(Dims::cube(3).unwrap());
        for (i, l) in [(5, Label::Foreground), (1, Label::Background), (7, Label::Background), (2, Label::Foreground)] {
            s.add(i, l).unwrap();
        }
        let got: Vec<_> = s.iter().collect();
        assert_eq!(
            got,
            vec![
                (1, Label::Background),
                (2, Label::Foreground),
                (5, Label::Foreground),
                (7, Label::Background)
            ]
        );
    }

    #[test]
    fn label_and_prob_validation() {
        let d = Dims::new(2, 1, 1).unwrap();
        assert!(LabelMap::new(d, vec![0, 2]).is_err());
        assert!(ProbMap::new(d, vec![0.5, 1.5]).is_err());
        let p = ProbMap::new(d, vec![0.2, 0.5]).unwrap();
        assert_eq!(p.argmax().labels(), &[0, 1]);
    }

    #[test]
    fn connectivity_offsets() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scribbles_stay_disjoint(ops in proptest::collection::vec((0usize..27, any::<bool>(), any::<bool>()), 0..200)) {
                let mut s = ScribbleSet::new(Dims::cube(3).unwrap());
                for (i, fg, remove) in ops {
                    if remove {
                        s.remove(i);
                    } else {
                        let l = if fg { Label::Foreground } else { Label::Background };
                        s.add(i, l).unwrap();
                    }
                    prop_assert!(s.foreground().is_disjoint(s.background()));
                }
            }
        }
    }
}
