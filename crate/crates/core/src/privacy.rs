//! Keypoint filtering by proximity to lines.
//!
//! Only keypoints close to a line segment are kept, so the shared features
//! describe structure rather than scene content.

use crate::directions::assign_arc;
use crate::error::{Error, Result};
use crate::lines::{Keypoint2D, Keypoint3D};
use crate::search::field_into;
use crate::sphere::{Arc2D, Segment3D, UnitVector};

/// Default angular threshold for 2D keypoints, radians.
pub const DEFAULT_LAMBDA_2D: f64 = 0.05;
/// Default metric threshold for 3D keypoints, meters.
pub const DEFAULT_LAMBDA_3D: f64 = 0.1;

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")))
    }
}

/// Keeps the keypoints within `lambda` radians of some arc, in input order.
pub fn filter_keypoints_2d(keypoints: &[Keypoint2D], arcs: &[Arc2D], lambda: f64) -> Result<Vec<Keypoint2D>> {
    check_lambda(lambda)?;
    if arcs.is_empty() {
        return Ok(Vec::new());
    }
    let dirs: Vec<_> = keypoints.iter().map(|k| *k.direction.as_vec()).collect();
    let mut dist = vec![0.0; dirs.len()];
    field_into(&dirs, arcs, &mut dist);
    Ok(keypoints
        .iter()
        .zip(&dist)
        .filter(|(_, d)| **d <= lambda)
        .map(|(k, _)| *k)
        .collect())
}

/// Like [`filter_keypoints_2d`], but only arcs belonging to one of the
/// principal directions (within `line_tol`) count as lines.
pub fn filter_keypoints_2d_principal(
    keypoints: &[Keypoint2D],
    arcs: &[Arc2D],
    lambda: f64,
    principal: &[UnitVector; 3],
    line_tol: f64,
) -> Result<Vec<Keypoint2D>> {
    let kept: Vec<Arc2D> = arcs
        .iter()
        .filter(|a| assign_arc(a, principal, line_tol).is_some())
        .copied()
        .collect();
    filter_keypoints_2d(keypoints, &kept, lambda)
}

/// Keeps the keypoints within `lambda` meters of some segment, in input order.
pub fn filter_keypoints_3d(keypoints: &[Keypoint3D], segments: &[Segment3D], lambda: f64) -> Result<Vec<Keypoint3D>> {
    check_lambda(lambda)?;
    Ok(keypoints
        .iter()
        .filter(|k| segments.iter().any(|s| s.distance_to_point(&k.position) <= lambda))
        .copied()
        .collect())
}
