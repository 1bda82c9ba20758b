//! Command-line driver and HTTP session service for scribble-based
//! refinement of 3D segmentations.

pub mod commands;
pub mod exit;
pub mod scribble_json;
pub mod service;
