//! Symmetric Chamfer scoring of projected lines, the comparison baseline.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lines::{LineMap3D, QueryLines2D};
use crate::rotations::RotationHypothesis;
use crate::search::{check_candidates, field_into, project_all, RankedPose};
use crate::sphere::{Arc2D, Pose, ProjectionParams, Vec3};

/// Spacing of the points sampled along each arc.
pub const CHAMFER_STEP: f64 = PI / 180.0;

/// Points along `arc` at most `step` apart, endpoints included.
pub fn sample_arc(arc: &Arc2D, step: f64, out: &mut Vec<Vec3>) {
    let n = (arc.angle() / step).ceil().max(1.0) as usize;
    for i in 0..=n {
        out.push(arc.point_at(arc.angle() * i as f64 / n as f64).into_vec());
    }
}

fn mean_distance(points: &[Vec3], arcs: &[Arc2D], buf: &mut Vec<f64>) -> f64 {
    buf.resize(points.len(), 0.0);
    field_into(points, arcs, buf);
    buf.iter().sum::<f64>() / points.len().max(1) as f64
}

/// Mean distance from the query samples to the projected arcs plus the
/// mean distance from the projected samples to the query arcs. An empty
/// projection scores `pi` for its missing direction.
pub fn chamfer_score(query_arcs: &[Arc2D], query_samples: &[Vec3], projected: &[Arc2D]) -> f64 {
    let mut buf = Vec::new();
    let mut proj_samples = Vec::new();
    for a in projected {
        sample_arc(a, CHAMFER_STEP, &mut proj_samples);
    }
    let forward = mean_distance(query_samples, projected, &mut buf);
    let backward = if proj_samples.is_empty() {
        PI
    } else {
        mean_distance(&proj_samples, query_arcs, &mut buf)
    };
    forward + backward
}

/// Ranks every `(rotation, translation)` pair by ascending Chamfer score.
/// `loss` and `residual` of each result hold the score; `inliers` is zero.
pub fn chamfer_rank(
    query: &QueryLines2D,
    map: &LineMap3D,
    rotations: &[RotationHypothesis],
    translations: &[Vec3],
    top_k: usize,
) -> Result<Vec<RankedPose>> {
    if query.arcs.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be >= 1".into()));
    }
    check_candidates(rotations, translations)?;
    let mut samples = Vec::new();
    for a in &query.arcs {
        sample_arc(a, CHAMFER_STEP, &mut samples);
    }
    let params = ProjectionParams::default();
    let n_t = translations.len();
    let mut all: Vec<RankedPose> = (0..rotations.len() * n_t)
        .into_par_iter()
        .map_init(Vec::new, |arcs, p| {
            let (ri, ti) = (p / n_t, p % n_t);
            let r = rotations[ri].rotation;
            let pose = Pose::from_parts_unchecked(r, -(r * translations[ti]));
            project_all(map.segments(), &pose, &params, arcs);
            let score = chamfer_score(&query.arcs, &samples, arcs);
            RankedPose {
                pose,
                inliers: 0,
                residual: score,
                loss: score,
                rotation_index: ri,
                translation_index: ti,
            }
        })
        .collect();
    all.sort_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.rotation_index.cmp(&b.rotation_index))
            .then(a.translation_index.cmp(&b.translation_index))
    });
    all.truncate(top_k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{project_segment_into, Mat3, Segment3D};

    fn scene() -> LineMap3D {
        let segs = vec![
            Segment3D::new(Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, -2.0, 0.0)).unwrap(),
            Segment3D::new(Vec3::new(2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 0.0)).unwrap(),
            Segment3D::new(Vec3::new(2.0, 2.0, 0.0), Vec3::new(2.0, 2.0, 2.5)).unwrap(),
            Segment3D::new(Vec3::new(-2.0, 1.0, 2.5), Vec3::new(2.0, 1.0, 2.5)).unwrap(),
        ];
        LineMap3D::from_segments(segs).unwrap()
    }

    fn render(map: &LineMap3D, pose: &Pose) -> QueryLines2D {
        let mut arcs = Vec::new();
        for s in map.segments() {
            project_segment_into(s, pose, &ProjectionParams::default(), &mut arcs).unwrap();
        }
        QueryLines2D::new(arcs)
    }

    #[test]
    fn sampling_spacing() {
        let a = Arc2D::from_vecs(Vec3::x(), Vec3::y()).unwrap();
        let mut pts = Vec::new();
        sample_arc(&a, CHAMFER_STEP, &mut pts);
        assert_eq!(pts.len(), 91);
        for w in pts.windows(2) {
            assert!(crate::sphere::angle_between(&w[0], &w[1]) <= CHAMFER_STEP + 1e-12);
        }
    }

    #[test]
    fn identical_lines_score_zero_and_rank_first() {
        let map = scene();
        let gt = Vec3::new(0.3, -0.2, 1.2);
        let q = render(&map, &Pose::from_center(Mat3::identity(), &gt).unwrap());
        let rot = [RotationHypothesis::from_rotation(Mat3::identity())];
        let pool = [Vec3::new(-1.0, 0.5, 1.0), gt, Vec3::new(1.0, 1.0, 2.0)];
        let ranked = chamfer_rank(&q, &map, &rot, &pool, 3).unwrap();
        assert_eq!(ranked[0].translation_index, 1);
        assert!(ranked[0].loss < 1e-12);
        assert!(ranked[1].loss > ranked[0].loss);
    }

    #[test]
    fn empty_query_rejected() {
        let rot = [RotationHypothesis::from_rotation(Mat3::identity())];
        let r = chamfer_rank(&QueryLines2D::default(), &scene(), &rot, &[Vec3::zeros()], 1);
        assert_eq!(r, Err(Error::EmptyQuery));
    }
}
