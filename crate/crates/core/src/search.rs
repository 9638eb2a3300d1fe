//! Candidate pose search with line distance fields.
//!
//! A distance field assigns every query point on the sphere its spherical
//! distance to the nearest arc. Poses are scored by how many query points
//! have matching 2D and projected-3D field values, separately for the three
//! line groups of each rotation hypothesis.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::{assign_arc, assign_segment, DEFAULT_LINE_TOL};
use crate::error::{Error, Result};
use crate::icosphere::{level_for, Icosphere};
use crate::lines::{LineMap3D, QueryLines2D};
use crate::rotations::RotationHypothesis;
use crate::sphere::{arc_distance_vec, check_rotation, project_with_limit, Arc2D, Pose, ProjectionParams, Segment3D, UnitVector, Vec3};

/// Query points on the sphere at which distance fields are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPointSet {
    pub points: Vec<UnitVector>,
}

impl QueryPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn vecs(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| *p.as_vec()).collect()
    }
}

/// Field values in radians, index-aligned with a [`QueryPointSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    InlierCount,
    L1,
    L2,
    Huber,
    Median,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::InlierCount, LossKind::L1, LossKind::L2, LossKind::Huber, LossKind::Median];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::InlierCount => "inlier_count",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Huber => "huber",
            LossKind::Median => "median",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Inlier threshold on field differences, radians.
    pub tau: f64,
    /// Requested number of query points; rounded up to an icosphere size.
    pub query_points: usize,
    pub top_k: usize,
    pub n_translations: usize,
    pub decompose: bool,
    pub loss: LossKind,
    /// Line-to-direction assignment tolerance, radians.
    pub line_tol: f64,
    /// Fraction of the bounding box trimmed per side before gridding.
    pub margin: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tau: 0.1,
            query_points: 42,
            top_k: 20,
            n_translations: 200,
            decompose: true,
            loss: LossKind::InlierCount,
            line_tol: DEFAULT_LINE_TOL,
            margin: 0.05,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if self.top_k == 0 || self.n_translations == 0 {
            return Err(Error::InvalidArgument("top_k and n_translations must be >= 1".into()));
        }
        if self.query_points < 12 {
            return Err(Error::InvalidArgument("query_points must be >= 12".into()));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::InvalidArgument(format!("margin must lie in [0, 0.5), got {}", self.margin)));
        }
        Ok(())
    }
}

/// A scored candidate pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPose {
    pub pose: Pose,
    /// Number of agreeing (query point, group) pairs, the negated loss.
    pub inliers: usize,
    /// Mean absolute field difference over the inliers (pi when there are none).
    pub residual: f64,
    /// Value of the configured loss; lower is better. For inlier counting
    /// this is `-inliers`.
    pub loss: f64,
    pub rotation_index: usize,
    pub translation_index: usize,
}

/// Vertices of the smallest icosphere with at least `n_target` points.
pub fn sample_query_points(n_target: usize) -> Result<QueryPointSet> {
    if n_target < 12 {
        return Err(Error::InvalidArgument(format!("need at least 12 query points, got {n_target}")));
    }
    let ico = Icosphere::new(level_for(n_target));
    Ok(QueryPointSet {
        points: ico.vertices().iter().map(|v| UnitVector::new_unchecked(*v)).collect(),
    })
}

/// Per-axis cell counts `max(1, floor(extent / h))` for the smallest spacing
/// `h` whose product stays within `n_t`.
pub fn grid_counts(extents: &Vec3, n_t: usize) -> [usize; 3] {
    let counts_for = |h: f64| -> [usize; 3] {
        [0, 1, 2].map(|k| ((extents[k] / h) * (1.0 + 1e-12)).floor().max(1.0) as usize)
    };
    let mut best = [1, 1, 1];
    let mut best_product = 1;
    for k in 0..3 {
        for m in 1..=n_t {
            let c = counts_for(extents[k] / m as f64);
            let product = c[0].saturating_mul(c[1]).saturating_mul(c[2]);
            if product <= n_t && product > best_product {
                best = c;
                best_product = product;
            }
        }
    }
    best
}

/// Cell centers of a uniform grid over the (margin-trimmed) bounding box,
/// in lexicographic `(x, y, z)` order.
pub fn translation_pool(map: &LineMap3D, n_t: usize, margin: f64) -> Result<Vec<Vec3>> {
    if n_t == 0 {
        return Err(Error::InvalidArgument("n_t must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::InvalidArgument(format!("margin must lie in [0, 0.5), got {margin}")));
    }
    let ext = map.extents();
    let lo = map.bbox_min() + ext * margin;
    let inner = ext * (1.0 - 2.0 * margin);
    let m = grid_counts(&inner, n_t);
    let mut out = Vec::with_capacity(m[0] * m[1] * m[2]);
    for i in 0..m[0] {
        for j in 0..m[1] {
            for k in 0..m[2] {
                let f = Vec3::new(
                    (i as f64 + 0.5) / m[0] as f64,
                    (j as f64 + 0.5) / m[1] as f64,
                    (k as f64 + 0.5) / m[2] as f64,
                );
                out.push(lo + inner.component_mul(&f));
            }
        }
    }
    Ok(out)
}

type Lanes = [f64; 4];

/// Per-point running maxima for nearest-arc selection, with the points
/// packed four to a lane group.
#[derive(Default)]
pub(crate) struct ArcTable {
    points: Vec<[Lanes; 3]>,
    best: Vec<Lanes>,
    index: Vec<Lanes>,
    rows: Vec<ArcRow>,
}

/// Arc vectors in the order lune `lo`, lune `hi`, normal, start, end.
type ArcRow = [[f64; 3]; 5];

fn nearest_scalar(points: &[[Lanes; 3]], rows: &[ArcRow], best: &mut [Lanes], index: &mut [Lanes]) {
    for (i, r) in rows.iter().enumerate() {
        let iv = i as f64;
        for ((p, b), ix) in points.iter().zip(best.iter_mut()).zip(index.iter_mut()) {
            for l in 0..4 {
                let dot = |v: &[f64; 3]| p[2][l].mul_add(v[2], p[1][l].mul_add(v[1], p[0][l] * v[0]));
                let (dlo, dhi, c, ks, ke) = (dot(&r[0]), dot(&r[1]), dot(&r[2]), dot(&r[3]), dot(&r[4]));
                let k = if ks > ke { ks } else { ke };
                let key = if dlo >= -1e-12 && dhi >= -1e-12 { 1.0 - c * c } else { k * k.abs() };
                if key > b[l] {
                    b[l] = key;
                    ix[l] = iv;
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn nearest_avx(points: &[[Lanes; 3]], rows: &[ArcRow], best: &mut [Lanes], index: &mut [Lanes]) {
    use std::arch::x86_64::*;
    let eps = _mm256_set1_pd(-1e-12);
    let one = _mm256_set1_pd(1.0);
    let sign = _mm256_set1_pd(-0.0);
    for (i, r) in rows.iter().enumerate() {
        let iv = _mm256_set1_pd(i as f64);
        let v = r.map(|w| w.map(|c| _mm256_set1_pd(c)));
        for ((p, b), ix) in points.iter().zip(best.iter_mut()).zip(index.iter_mut()) {
            let (x, y, z) = (_mm256_loadu_pd(p[0].as_ptr()), _mm256_loadu_pd(p[1].as_ptr()), _mm256_loadu_pd(p[2].as_ptr()));
            let dot = |w: &[__m256d; 3]| _mm256_fmadd_pd(z, w[2], _mm256_fmadd_pd(y, w[1], _mm256_mul_pd(x, w[0])));
            let (dlo, dhi, c, ks, ke) = (dot(&v[0]), dot(&v[1]), dot(&v[2]), dot(&v[3]), dot(&v[4]));
            let k = _mm256_blendv_pd(ke, ks, _mm256_cmp_pd::<_CMP_GT_OQ>(ks, ke));
            let inside = _mm256_and_pd(_mm256_cmp_pd::<_CMP_GE_OQ>(dlo, eps), _mm256_cmp_pd::<_CMP_GE_OQ>(dhi, eps));
            let key = _mm256_blendv_pd(_mm256_mul_pd(k, _mm256_andnot_pd(sign, k)), _mm256_sub_pd(one, _mm256_mul_pd(c, c)), inside);
            let old = _mm256_loadu_pd(b.as_ptr());
            let better = _mm256_cmp_pd::<_CMP_GT_OQ>(key, old);
            _mm256_storeu_pd(b.as_mut_ptr(), _mm256_blendv_pd(old, key, better));
            _mm256_storeu_pd(ix.as_mut_ptr(), _mm256_blendv_pd(_mm256_loadu_pd(ix.as_ptr()), iv, better));
        }
    }
}

fn nearest(points: &[[Lanes; 3]], rows: &[ArcRow], best: &mut [Lanes], index: &mut [Lanes]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { nearest_avx(points, rows, best, index) };
    }
    nearest_scalar(points, rows, best, index)
}

impl ArcTable {
    /// Each arc gets a key increasing in `cos(distance)`: `1 - c^2` inside
    /// its lune, where `c = x.n`, and the signed square of the larger
    /// endpoint cosine outside it. The first arc with the largest key wins.
    pub(crate) fn field(&mut self, points: &[Vec3], arcs: &[Arc2D], out: &mut [f64]) {
        if arcs.is_empty() {
            out.fill(PI);
            return;
        }
        self.points.clear();
        for chunk in points.chunks(4) {
            let mut lanes = [[0.0; 4]; 3];
            for (l, x) in chunk.iter().enumerate() {
                for k in 0..3 {
                    lanes[k][l] = x[k];
                }
            }
            self.points.push(lanes);
        }
        let groups = self.points.len();
        self.best.clear();
        self.best.resize(groups, [f64::NEG_INFINITY; 4]);
        self.index.clear();
        self.index.resize(groups, [0.0; 4]);
        self.rows.clear();
        self.rows
            .extend(arcs.iter().map(|a| [a.lune_lo(), a.lune_hi(), a.normal(), a.start_vec(), a.end_vec()].map(|v| [v[0], v[1], v[2]])));
        nearest(&self.points, &self.rows, &mut self.best, &mut self.index);
        for (p, (x, o)) in points.iter().zip(out.iter_mut()).enumerate() {
            *o = arc_distance_vec(x, &arcs[self.index[p / 4][p % 4] as usize]);
        }
    }
}

/// Writes the distance field of `arcs` at `points` into `out`.
pub(crate) fn field_into(points: &[Vec3], arcs: &[Arc2D], out: &mut [f64]) {
    ArcTable::default().field(points, arcs, out);
}

/// Projects every segment at `pose` into `buf`, skipping segments that touch
/// the camera center.
pub(crate) fn project_all(segments: &[Segment3D], pose: &Pose, params: &ProjectionParams, buf: &mut Vec<Arc2D>) {
    buf.clear();
    let cos_max = params.max_arc.cos();
    for s in segments {
        let _ = project_with_limit(s, pose, params, cos_max, buf);
    }
}

/// Field of the query arcs: nearest-arc spherical distance at each point,
/// `pi` everywhere when there are no arcs.
pub fn ldf_2d(query_points: &QueryPointSet, arcs: &[Arc2D]) -> DistanceField {
    let mut values = vec![0.0; query_points.len()];
    field_into(&query_points.vecs(), arcs, &mut values);
    DistanceField { values }
}

/// Field of the map segments projected at `pose`.
pub fn ldf_3d(query_points: &QueryPointSet, segments: &[Segment3D], pose: &Pose) -> DistanceField {
    let mut arcs = Vec::new();
    project_all(segments, pose, &ProjectionParams::default(), &mut arcs);
    ldf_2d(query_points, &arcs)
}

/// Line groups and cached 2D fields for one rotation hypothesis.
struct RotationContext {
    fields_2d: Vec<Vec<f64>>,
    segments: Vec<Vec<Segment3D>>,
}

fn build_context(query: &QueryLines2D, map: &LineMap3D, hyp: &RotationHypothesis, points: &[Vec3], cfg: &SearchConfig) -> RotationContext {
    let (arc_groups, seg_groups): (Vec<Vec<Arc2D>>, Vec<Vec<Segment3D>>) = if cfg.decompose {
        let mut arcs: Vec<Vec<Arc2D>> = vec![Vec::new(); 3];
        for a in &query.arcs {
            if let Some(g) = assign_arc(a, &hyp.triplet_2d, cfg.line_tol) {
                arcs[g].push(*a);
            }
        }
        let mut segs: Vec<Vec<Segment3D>> = vec![Vec::new(); 3];
        for s in map.segments() {
            if let Some(g) = assign_segment(s, &hyp.triplet_3d, cfg.line_tol) {
                segs[g].push(*s);
            }
        }
        (arcs, segs)
    } else {
        (vec![query.arcs.clone()], vec![map.segments().to_vec()])
    };
    let fields_2d = arc_groups
        .iter()
        .map(|arcs| {
            let mut f = vec![0.0; points.len()];
            field_into(points, arcs, &mut f);
            f
        })
        .collect();
    RotationContext {
        fields_2d,
        segments: seg_groups,
    }
}

#[derive(Default)]
struct Scratch {
    arcs: Vec<Arc2D>,
    table: ArcTable,
    field: Vec<f64>,
    diffs: Vec<f64>,
}

struct Score {
    inliers: usize,
    residual: f64,
    loss: f64,
}

fn score_pose(ctx: &RotationContext, pose: &Pose, points: &[Vec3], cfg: &SearchConfig, scratch: &mut Scratch) -> Score {
    let params = ProjectionParams::default();
    scratch.field.resize(points.len(), 0.0);
    scratch.diffs.clear();
    let mut inliers = 0;
    let mut inlier_sum = 0.0;
    for (segments, f2) in ctx.segments.iter().zip(&ctx.fields_2d) {
        project_all(segments, pose, &params, &mut scratch.arcs);
        scratch.table.field(points, &scratch.arcs, &mut scratch.field);
        for (a, b) in f2.iter().zip(&scratch.field) {
            let d = (a - b).abs();
            if d < cfg.tau {
                inliers += 1;
                inlier_sum += d;
            }
            scratch.diffs.push(d);
        }
    }
    let residual = if inliers > 0 { inlier_sum / inliers as f64 } else { PI };
    Score {
        inliers,
        residual,
        loss: aggregate_loss(cfg.loss, &mut scratch.diffs, inliers, cfg.tau),
    }
}

fn aggregate_loss(kind: LossKind, diffs: &mut [f64], inliers: usize, tau: f64) -> f64 {
    match kind {
        LossKind::InlierCount => -(inliers as f64),
        LossKind::L1 => diffs.iter().sum(),
        LossKind::L2 => diffs.iter().map(|d| d * d).sum(),
        LossKind::Huber => diffs
            .iter()
            .map(|&d| if d <= tau { 0.5 * d * d } else { tau * (d - 0.5 * tau) })
            .sum(),
        LossKind::Median => {
            diffs.sort_by(f64::total_cmp);
            let n = diffs.len();
            if n == 0 {
                0.0
            } else if n % 2 == 1 {
                diffs[n / 2]
            } else {
                0.5 * (diffs[n / 2 - 1] + diffs[n / 2])
            }
        }
    }
}

/// Total order used for ranking: better candidates compare as `Less`.
pub(crate) fn compare_ranked(a: &RankedPose, b: &RankedPose, kind: LossKind) -> Ordering {
    let primary = match kind {
        LossKind::InlierCount => b.inliers.cmp(&a.inliers).then(a.residual.total_cmp(&b.residual)),
        _ => a.loss.total_cmp(&b.loss),
    };
    primary
        .then(a.rotation_index.cmp(&b.rotation_index))
        .then(a.translation_index.cmp(&b.translation_index))
}

pub(crate) fn check_candidates(rotations: &[RotationHypothesis], translations: &[Vec3]) -> Result<()> {
    if rotations.is_empty() {
        return Err(Error::NoCandidates("no rotation hypotheses"));
    }
    if translations.is_empty() {
        return Err(Error::NoCandidates("no translations"));
    }
    for h in rotations {
        check_rotation(&h.rotation)?;
    }
    Ok(())
}

/// Scores every `(rotation, translation)` pair and returns the best `top_k`.
///
/// `translations` are camera positions in world coordinates. The 2D fields
/// of each rotation's line groups are computed once and reused across all
/// translations. Results do not depend on the rayon schedule.
pub fn rank_poses(
    query: &QueryLines2D,
    map: &LineMap3D,
    rotations: &[RotationHypothesis],
    translations: &[Vec3],
    cfg: &SearchConfig,
) -> Result<Vec<RankedPose>> {
    cfg.validate()?;
    check_candidates(rotations, translations)?;
    let points = sample_query_points(cfg.query_points)?.vecs();
    let contexts: Vec<RotationContext> = rotations
        .par_iter()
        .map(|h| build_context(query, map, h, &points, cfg))
        .collect();
    let n_t = translations.len();
    let mut all: Vec<RankedPose> = (0..rotations.len() * n_t)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, p| {
            let (ri, ti) = (p / n_t, p % n_t);
            let pose = Pose::from_parts_unchecked(rotations[ri].rotation, -(rotations[ri].rotation * translations[ti]));
            let s = score_pose(&contexts[ri], &pose, &points, cfg, scratch);
            RankedPose {
                pose,
                inliers: s.inliers,
                residual: s.residual,
                loss: s.loss,
                rotation_index: ri,
                translation_index: ti,
            }
        })
        .collect();
    all.sort_by(|a, b| compare_ranked(a, b, cfg.loss));
    all.truncate(cfg.top_k);
    Ok(all)
}

/// Inlier count of a single pose, evaluated without caching or batching.
pub fn count_inliers(query: &QueryLines2D, map: &LineMap3D, hyp: &RotationHypothesis, center: &Vec3, cfg: &SearchConfig) -> Result<usize> {
    let points = sample_query_points(cfg.query_points)?.vecs();
    let ctx = build_context(query, map, hyp, &points, cfg);
    let pose = Pose::from_center(hyp.rotation, center)?;
    Ok(score_pose(&ctx, &pose, &points, cfg, &mut Scratch::default()).inliers)
}
