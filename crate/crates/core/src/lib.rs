//! Scribble-driven refinement of 3D segmentations.
//!
//! A [`session::Session`] holds a volume, an initial segmentation with its
//! probability map, and the scribbles gathered so far. Each refinement round
//! trains a small multi-scale network on the scribbles and on a pruned
//! sample of the initial labels, weighted by geodesic distance to the
//! scribbles, then smooths the network's output with an exact graph cut.
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod error;
pub mod distance;
pub mod geodesic;
pub mod graphcut;
pub mod io;
pub mod metrics;
pub mod model;
pub mod session;
pub mod sim;
pub mod nn;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/volumes.md")]
    struct Volumes;
    #[doc = include_str!("../../../book/src/weights.md")]
    struct Weights;
    #[doc = include_str!("../../../book/src/network.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/graphcut.md")]
    struct Graphcut;
    #[doc = include_str!("../../../book/src/sessions.md")]
    struct Sessions;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
