//! Synthetic data for headless evaluation: phantom volumes, corrupted
//! initial segmentations, and a scribbler that stands in for the user.

mod corrupt;
mod phantom;
mod scribbler;

pub use corrupt::{corrupt_segmentation, Corrupted, CorruptionSpec};
pub use phantom::{make_phantom, Phantom, PhantomSpec};
pub use scribbler::{synthesize_scribbles, ScribblerConfig};

use crate::volume::Dims;

/// 6-connected components of `mask`, each listed in ascending index order,
/// ordered by their first voxel.
pub fn connected_components(mask: &[bool], dims: Dims) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), dims.len(), "mask length");
    let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let c = dims.coord_unchecked(i);
            for s in steps {
                if let Some(j) = dims.offset(c, s) {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_of_two_bars() {
        let dims = Dims::new(5, 3, 1).unwrap();
        // Diagonal contact does not connect under 6-connectivity.
        let mask: Vec<bool> = [1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1].iter().map(|&b| b == 1).collect();
        let c = connected_components(&mask, dims);
        assert_eq!(c, vec![vec![0, 1], vec![7], vec![13, 14]]);
        assert!(connected_components(&[false; 15], dims).is_empty());
    }
}
