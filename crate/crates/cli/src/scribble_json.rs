//! JSON forms of scribbles.
//!
//! A file holds the grid and both classes:
//!
//! ```json
//! {"dims": [32, 32, 32], "foreground": [[4, 5, 6]], "background": [[0, 0, 0]]}
//! ```
//!
//! A stroke, as posted to the service, is one class and a voxel list; the
//! `erase` class removes scribbles instead of adding them:
//!
//! ```json
//! {"class": "foreground", "voxels": [[4, 5, 6], [5, 5, 6]]}
//! ```

use monet::volume::{Dims, Label, ScribbleSet};
use monet::{Error, Result};
use serde::{Deserialize, Serialize};

pub type Coord = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScribbleFile {
    pub dims: [usize; 3],
    #[serde(default)]
    pub foreground: Vec<Coord>,
    #[serde(default)]
    pub background: Vec<Coord>,
}

impl ScribbleFile {
    pub fn from_set(s: &ScribbleSet) -> Self {
        let d = s.dims();
        let coords = |set: &std::collections::BTreeSet<usize>| {
            set.iter()
                .map(|&i| {
                    let (x, y, z) = d.coord_unchecked(i);
                    [x, y, z]
                })
                .collect()
        };
        ScribbleFile {
            dims: [d.nx, d.ny, d.nz],
            foreground: coords(s.foreground()),
            background: coords(s.background()),
        }
    }

    /// Fails on out-of-grid voxels and on voxels listed under both classes.
    pub fn to_set(&self) -> Result<ScribbleSet> {
        let [nx, ny, nz] = self.dims;
        let dims = Dims::new(nx, ny, nz)?;
        let mut s = ScribbleSet::new(dims);
        for &[x, y, z] in &self.foreground {
            s.add_coord((x, y, z), Label::Foreground)?;
        }
        for &[x, y, z] in &self.background {
            let i = dims.linear_index((x, y, z))?;
            if s.label_at(i) == Some(Label::Foreground) {
                return Err(Error::Validation(format!("voxel ({x}, {y}, {z}) is in both classes")));
            }
            s.add(i, Label::Background)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeClass {
    Foreground,
    Background,
    Erase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stroke {
    pub class: StrokeClass,
    pub voxels: Vec<Coord>,
}

impl Stroke {
    /// Applies the stroke to `s`; later strokes override earlier ones.
    pub fn apply(&self, s: &mut ScribbleSet) -> Result<()> {
        let dims = s.dims();
        for &[x, y, z] in &self.voxels {
            let i = dims.linear_index((x, y, z))?;
            match self.class {
                StrokeClass::Foreground => s.add(i, Label::Foreground)?,
                StrokeClass::Background => s.add(i, Label::Background)?,
                StrokeClass::Erase => {
                    s.remove(i);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let dims = Dims::new(4, 3, 2).unwrap();
        let mut s = ScribbleSet::new(dims);
        s.add(5, Label::Foreground).unwrap();
        s.add(7, Label::Background).unwrap();
        s.add(23, Label::Background).unwrap();
        let text = serde_json::to_string(&ScribbleFile::from_set(&s)).unwrap();
        let back: ScribbleFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_set().unwrap(), s);
    }

    #[test]
    fn overlap_and_bounds_are_rejected() {
        let f = ScribbleFile {
            dims: [2, 2, 2],
            foreground: vec![[0, 0, 0]],
            background: vec![[0, 0, 0]],
        };
        assert!(f.to_set().is_err());
        let f = ScribbleFile {
            dims: [2, 2, 2],
            foreground: vec![[2, 0, 0]],
            background: vec![],
        };
        assert!(f.to_set().is_err());
    }

    #[test]
    fn strokes_add_and_erase() {
        let mut s = ScribbleSet::new(Dims::cube(3).unwrap());
        let fg: Stroke = serde_json::from_str(r#"{"class":"foreground","voxels":[[0,0,0],[1,0,0]]}"#).unwrap();
        fg.apply(&mut s).unwrap();
        let bg = Stroke { class: StrokeClass::Background, voxels: vec![[1, 0, 0]] };
        bg.apply(&mut s).unwrap();
        assert_eq!((s.foreground().len(), s.background().len()), (1, 1));
        Stroke { class: StrokeClass::Erase, voxels: vec![[0, 0, 0], [1, 0, 0]] }.apply(&mut s).unwrap();
        assert!(s.is_empty());
    }
}
