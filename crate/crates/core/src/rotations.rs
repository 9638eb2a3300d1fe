//! Candidate rotations from pairs of principal-direction triplets.

use nalgebra::SVD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::{PrincipalDirections2D, PrincipalDirections3D};
use crate::error::{Error, Result};
use crate::sphere::{rotation_angle, Mat3, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationConfig {
    /// Largest accepted mean squared alignment residual.
    pub mse_max: f64,
    /// Hypotheses closer than this (degrees) to a better one are dropped.
    pub dedup_angle_deg: f64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            mse_max: 0.02,
            dedup_angle_deg: 5.0,
        }
    }
}

/// A rotation together with the direction triplets it aligns.
/// `triplet_3d[i]` maps onto `triplet_2d[i]` under `rotation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationHypothesis {
    pub rotation: Mat3,
    pub triplet_2d: [UnitVector; 3],
    pub triplet_3d: [UnitVector; 3],
    pub mse: f64,
}

impl RotationHypothesis {
    /// Hypothesis whose triplets are the world axes and their images.
    pub fn from_rotation(rotation: Mat3) -> Self {
        let axes = [UnitVector::x_axis(), UnitVector::y_axis(), UnitVector::z_axis()];
        RotationHypothesis {
            rotation,
            triplet_2d: axes.map(|a| a.rotate(&rotation)),
            triplet_3d: axes,
            mse: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationCandidates {
    /// Deduplicated hypotheses sorted by ascending mse.
    pub hypotheses: Vec<RotationHypothesis>,
    /// Number of alignment problems solved before filtering.
    pub kabsch_evaluations: usize,
    /// Number of hypotheses under `mse_max` before deduplication.
    pub feasible: usize,
}

/// Rotation maximizing `tr(R^T m)`, i.e. the SO(3) polar factor of `m`.
/// Fails when `m` has rank below two.
pub(crate) fn best_rotation(m: &Mat3) -> Result<Mat3> {
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed")),
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[order[1]] > 1e-10 * sv[order[0]].max(1.0)) {
        return Err(Error::DegenerateConfiguration("cross-covariance has rank < 2"));
    }
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    Ok(u * d * v_t)
}

/// Rotation `R` minimizing `sum |a_i - R b_i|^2`, with the mean squared residual.
pub fn kabsch(a: &[UnitVector; 3], b: &[UnitVector; 3]) -> Result<(Mat3, f64)> {
    let mut m = Mat3::zeros();
    for i in 0..3 {
        m += a[i].as_vec() * b[i].as_vec().transpose();
    }
    let r = best_rotation(&m)?;
    let mse = (0..3)
        .map(|i| (a[i].as_vec() - r * b[i].as_vec()).norm_squared())
        .sum::<f64>()
        / 3.0;
    Ok((r, mse))
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn triples(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Every 3-subset of the 2D directions against every 3-subset of the 3D
/// directions under all permutations and sign flips of the 3D triplet.
///
/// Iteration order is fixed (lexicographic subsets, then permutations, then
/// sign patterns), so the output does not depend on scheduling.
pub fn enumerate_rotations(
    p2d: &PrincipalDirections2D,
    p3d: &PrincipalDirections3D,
    cfg: &RotationConfig,
) -> Result<RotationCandidates> {
    if p2d.len() < 3 || p3d.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 directions on each side, got {} and {}",
            p2d.len(),
            p3d.len()
        )));
    }
    let subsets_2d = triples(p2d.len());
    let subsets_3d = triples(p3d.len());

    let per_subset: Vec<(usize, Vec<RotationHypothesis>)> = subsets_2d
        .par_iter()
        .map(|s2| {
            let a = s2.map(|i| p2d.directions[i]);
            let mut evaluated = 0;
            let mut kept = Vec::new();
            for s3 in &subsets_3d {
                for perm in &PERMUTATIONS {
                    for signs in 0..8u8 {
                        let b = [0, 1, 2].map(|i| {
                            let d = p3d.directions[s3[perm[i]]];
                            if signs & (1 << i) != 0 {
                                -d
                            } else {
                                d
                            }
                        });
                        evaluated += 1;
                        if let Ok((rotation, mse)) = kabsch(&a, &b) {
                            if mse <= cfg.mse_max {
                                kept.push(RotationHypothesis {
                                    rotation,
                                    triplet_2d: a,
                                    triplet_3d: b,
                                    mse,
                                });
                            }
                        }
                    }
                }
            }
            (evaluated, kept)
        })
        .collect();

    let kabsch_evaluations = per_subset.iter().map(|(n, _)| n).sum();
    let mut feasible: Vec<RotationHypothesis> = per_subset.into_iter().flat_map(|(_, h)| h).collect();
    let n_feasible = feasible.len();
    if feasible.is_empty() {
        return Err(Error::NoFeasibleRotation);
    }
    // stable: equal mse keeps enumeration order
    feasible.sort_by(|x, y| x.mse.total_cmp(&y.mse));
    let mut hypotheses: Vec<RotationHypothesis> = Vec::new();
    for h in feasible {
        if hypotheses
            .iter()
            .all(|k| rotation_angle(&k.rotation, &h.rotation) > cfg.dedup_angle_deg)
        {
            hypotheses.push(h);
        }
    }
    Ok(RotationCandidates {
        hypotheses,
        kabsch_evaluations,
        feasible: n_feasible,
    })
}
