//! Panoramic visual localization against 3D line maps.
//!
//! A query panorama is reduced to arcs on the unit sphere, a map to metric 3D
//! segments. Candidate rotations come from aligning principal directions,
//! candidate translations from a grid over the map, and every candidate pose
//! is scored by comparing line distance fields decomposed along the three
//! principal directions. The best candidates are refined with PnP-RANSAC on
//! keypoint correspondences.

pub mod chamfer;
pub mod directions;
pub mod error;
pub mod eval;
pub mod icosphere;
pub mod io;
pub mod lines;
pub mod pipeline;
pub mod privacy;
pub mod refine;
pub mod rotations;
pub mod search;
pub mod sim;
pub mod sphere;

pub use error::{Error, Result};
