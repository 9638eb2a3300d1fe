//! Pose refinement from 2D-3D keypoint correspondences.
//!
//! Minimal samples are solved with a three-point resection on bearing
//! vectors, consensus is found with RANSAC, and the winning model is
//! polished by Gauss-Newton on the angular reprojection error.

use nalgebra::{DMatrix, Matrix2x3, Matrix6, SMatrix, Vector2, Vector6};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lines::{Keypoint2D, LineMap3D};
use crate::rotations::best_rotation;
use crate::sphere::{angle_between, axis_angle, Mat3, Pose, UnitVector, Vec3, CENTER_EPS};

/// A bearing observed in the query matched to a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub bearing: UnitVector,
    pub point: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Angular inlier threshold, radians.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 1000,
            inlier_threshold: 0.01,
            min_inliers: 6,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    /// Per-correspondence inlier flags of the accepted model; all false when
    /// no sample reached `min_inliers` and `pose` is the initial pose.
    pub inliers: Vec<bool>,
    /// Mean angular error over the inliers, radians.
    pub mean_error: f64,
}

impl Refinement {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }

    pub fn has_consensus(&self) -> bool {
        self.inliers.iter().any(|b| *b)
    }
}

/// Angle between the observed bearing and the direction to `point` under `pose`.
pub fn angular_error(pose: &Pose, c: &Correspondence) -> f64 {
    let w = pose.transform(&c.point);
    if w.norm() < CENTER_EPS {
        return std::f64::consts::PI;
    }
    angle_between(c.bearing.as_vec(), &w)
}

// Polynomials are stored lowest degree first.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[i] += x;
    }
    out
}

fn poly_scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect()
}

/// Real roots of `p` from the eigenvalues of its companion matrix, polished
/// by Newton steps. Near-real conjugate pairs are kept because a double root
/// splits into one under rounding; callers verify the roots they use.
fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = p[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -p[i] / lead;
    }
    let dp = poly_deriv(&p[..=deg]);
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-3 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..60 {
                let d = poly_eval(&dp, x);
                let step = poly_eval(&p[..=deg], x) / d;
                if !step.is_finite() {
                    break;
                }
                x -= step;
                if step.abs() < 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Rigid transform taking the world points onto the camera-frame points.
fn absolute_orientation(world: &[Vec3; 3], cam: &[Vec3; 3]) -> Option<Pose> {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut m = Mat3::zeros();
    for i in 0..3 {
        m += (cam[i] - cc) * (world[i] - wc).transpose();
    }
    let r = best_rotation(&m).ok()?;
    Some(Pose::from_parts_unchecked(r, cc - r * wc))
}

fn p3p_ordered(c: &[Correspondence; 3], out: &mut Vec<Pose>) {
    let f = c.map(|x| *x.bearing.as_vec());
    let x = c.map(|x| x.point);
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    let cos_a = f[1].dot(&f[2]);
    let cos_b = f[0].dot(&f[2]);
    let cos_g = f[0].dot(&f[1]);

    // with s2 = u s1, s3 = v s1 the law of cosines gives two quadratics in u
    //   b2 u^2 - 2 b2 cos_a v u + b2 v^2 - a2 B(v) = 0
    //   b2 u^2 - 2 b2 cos_g u   + b2     - c2 B(v) = 0
    // where B(v) = 1 + v^2 - 2 v cos_b; their difference is linear in u.
    let bv = [1.0, -2.0 * cos_b, 1.0];
    let a0 = poly_add(&[0.0, 0.0, b2], &poly_scale(&bv, -a2));
    let c0 = poly_add(&[b2], &poly_scale(&bv, -c2));
    let c1 = -2.0 * b2 * cos_g;
    let d = poly_add(&a0, &poly_scale(&c0, -1.0));
    let l = [-c1, -2.0 * b2 * cos_a];
    // u = -d / l substituted into the second quadratic
    let quartic = poly_add(
        &poly_add(&poly_scale(&poly_mul(&d, &d), b2), &poly_scale(&poly_mul(&d, &l), -c1)),
        &poly_mul(&c0, &poly_mul(&l, &l)),
    );
    for v in real_roots(&quartic) {
        let lv = poly_eval(&l, v);
        let bvv = poly_eval(&bv, v);
        if v <= 0.0 || lv.abs() < 1e-12 || bvv <= 0.0 {
            continue;
        }
        let u = -poly_eval(&d, v) / lv;
        if u <= 0.0 {
            continue;
        }
        let s1 = (b2 / bvv).sqrt();
        let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        if let Some(pose) = absolute_orientation(&x, &cam) {
            if c.iter().all(|k| angular_error(&pose, k) < 1e-6) {
                out.push(pose);
            }
        }
    }
}

/// All camera poses consistent with three bearing-to-point correspondences.
///
/// Returns an empty list for collinear points or when no real solution
/// reprojects within `1e-6` rad.
pub fn solve_p3p(c: &[Correspondence; 3]) -> Vec<Pose> {
    let x = c.map(|k| k.point);
    let scale = (x[1] - x[0]).norm().max((x[2] - x[0]).norm());
    if (x[1] - x[0]).cross(&(x[2] - x[0])).norm() <= 1e-9 * scale * scale.max(1e-300) || scale == 0.0 {
        return Vec::new();
    }
    // the elimination divides by a term that can vanish for one ordering,
    // so every cyclic ordering is tried and duplicates are merged
    let mut raw = Vec::new();
    for k in 0..3 {
        let ordered = [c[k], c[(k + 1) % 3], c[(k + 2) % 3]];
        p3p_ordered(&ordered, &mut raw);
    }
    let mut out: Vec<Pose> = Vec::new();
    for p in raw {
        let dup = out.iter().any(|q| {
            (q.rotation() - p.rotation()).abs().max() < 1e-6 && (q.center() - p.center()).norm() < 1e-6 * (1.0 + scale)
        });
        if !dup {
            out.push(p);
        }
    }
    out
}

fn tangent_basis(u: &Vec3) -> Matrix2x3<f64> {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = u.cross(&helper).normalize();
    let e2 = u.cross(&e1);
    Matrix2x3::from_rows(&[e1.transpose(), e2.transpose()])
}

/// Log-map residual of one correspondence: a tangent 2-vector at the
/// bearing whose norm is the angular error.
fn residual(basis: &Matrix2x3<f64>, u: &Vec3, w: &Vec3) -> Vector2<f64> {
    let wh = w.normalize();
    let g = basis * wh;
    let s = g.norm();
    let theta = s.atan2(u.dot(&wh));
    let phi = if s < 1e-12 { 1.0 } else { theta / s };
    g * phi
}

/// Residual and its 2x6 Jacobian for the left-multiplicative update
/// `R <- exp([dw]) R`, `t <- t + dt`.
fn residual_jacobian(basis: &Matrix2x3<f64>, u: &Vec3, pose: &Pose, p: &Vec3) -> (Vector2<f64>, SMatrix<f64, 2, 6>) {
    let rp = pose.rotation() * p;
    let w = rp + pose.translation();
    let wn = w.norm();
    let wh = w / wn;
    let g = basis * wh;
    let s = g.norm();
    let c = u.dot(&wh);
    let theta = s.atan2(c);
    let (phi, dphi) = if theta < 1e-4 {
        (1.0 + theta * theta / 6.0, theta / 3.0)
    } else {
        let st = theta.sin();
        (theta / st, (st - theta * theta.cos()) / (st * st))
    };
    let r = g * phi;
    // d theta / d wh, treating wh as unconstrained
    let dtheta = if s < 1e-12 {
        nalgebra::RowVector3::zeros()
    } else {
        ((g.transpose() * basis) * (c / s) - u.transpose() * s) / (s * s + c * c)
    };
    let dr_dwh = basis * phi + g * dtheta * dphi;
    let dwh_dw = (Mat3::identity() - wh * wh.transpose()) / wn;
    let dr_dw = dr_dwh * dwh_dw;
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dr_dw * (-rp.cross_matrix())));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dr_dw);
    (r, j)
}

/// Applies the update `[dw, dt]`: `R <- exp([dw]) R`, `t <- t + dt`.
pub fn retract(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    let angle = w.norm();
    let dr = if angle > 0.0 { axis_angle(&w, angle) } else { Mat3::identity() };
    let t = pose.translation() + Vec3::new(delta[3], delta[4], delta[5]);
    Pose::from_parts_unchecked(dr * pose.rotation(), t)
}

/// Tangent-space residual of `c` at `pose`; its norm is the angular error.
pub fn correspondence_residual(pose: &Pose, c: &Correspondence) -> Vector2<f64> {
    let u = c.bearing.as_vec();
    residual(&tangent_basis(u), u, &pose.transform(&c.point))
}

/// Residual of `c` at `pose` and its Jacobian with respect to the update
/// taken by [`retract`].
pub fn correspondence_jacobian(pose: &Pose, c: &Correspondence) -> (Vector2<f64>, SMatrix<f64, 2, 6>) {
    let u = c.bearing.as_vec();
    residual_jacobian(&tangent_basis(u), u, pose, &c.point)
}

fn mean_error(pose: &Pose, matches: &[Correspondence], mask: &[bool]) -> f64 {
    let (sum, n) = matches
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), (c, _)| (s + angular_error(pose, c), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Gauss-Newton on the squared angular errors of the masked matches.
/// Steps that raise the cost are rejected; the result never has a larger
/// mean error than `pose`.
pub fn polish(pose: &Pose, matches: &[Correspondence], mask: &[bool]) -> Pose {
    let used: Vec<(Matrix2x3<f64>, &Correspondence)> = matches
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| (tangent_basis(c.bearing.as_vec()), c))
        .collect();
    if used.len() < 3 {
        return *pose;
    }
    let cost = |p: &Pose| -> f64 {
        used.iter()
            .map(|(b, c)| residual(b, c.bearing.as_vec(), &p.transform(&c.point)).norm_squared())
            .sum()
    };
    let mut current = *pose;
    let mut current_cost = cost(&current);
    for _ in 0..20 {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (b, c) in &used {
            let (r, j) = residual_jacobian(b, c.bearing.as_vec(), &current, &c.point);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(chol) = h.cholesky() else { break };
        let delta = -chol.solve(&g);
        let next = retract(&current, &delta);
        let next_cost = cost(&next);
        if !(next_cost <= current_cost) {
            break;
        }
        current = next;
        current_cost = next_cost;
        if delta.norm() < 1e-10 {
            break;
        }
    }
    if mean_error(&current, matches, mask) > mean_error(pose, matches, mask) {
        *pose
    } else {
        current
    }
}

/// Seeded P3P-RANSAC followed by Gauss-Newton polishing.
///
/// The best model has the most inliers, then the lowest mean inlier error,
/// then the earliest trial. When no model reaches `min_inliers` the initial
/// pose is returned with an all-false mask.
pub fn refine_pose(initial: &Pose, matches: &[Correspondence], cfg: &RansacConfig) -> Result<Refinement> {
    if matches.len() < 3 {
        return Err(Error::TooFewMatches(matches.len()));
    }
    if !(cfg.inlier_threshold > 0.0) || !(0.0..1.0).contains(&cfg.confidence) {
        return Err(Error::InvalidArgument("RANSAC threshold must be positive and confidence in [0, 1)".into()));
    }
    let n = matches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Pose)> = None;
    let mut budget = cfg.max_iterations;
    let mut trial = 0;
    while trial < budget {
        trial += 1;
        let idx = sample(&mut rng, n, 3);
        let s = [matches[idx.index(0)], matches[idx.index(1)], matches[idx.index(2)]];
        for pose in solve_p3p(&s) {
            let mut count = 0;
            let mut sum = 0.0;
            for c in matches {
                let e = angular_error(&pose, c);
                if e < cfg.inlier_threshold {
                    count += 1;
                    sum += e;
                }
            }
            let err = sum / count.max(1) as f64;
            let better = match &best {
                None => count > 0,
                Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
            };
            if better {
                best = Some((count, err, pose));
                let w = count as f64 / n as f64;
                let miss = 1.0 - w.powi(3);
                if miss <= 0.0 {
                    budget = trial;
                } else {
                    let needed = ((1.0 - cfg.confidence).ln() / miss.ln()).ceil();
                    if needed.is_finite() && needed >= 0.0 {
                        budget = budget.min((needed as usize).max(trial));
                    }
                }
            }
        }
    }
    match best {
        Some((count, _, pose)) if count >= cfg.min_inliers.max(3) => {
            let mask: Vec<bool> = matches.iter().map(|c| angular_error(&pose, c) < cfg.inlier_threshold).collect();
            let refined = polish(&pose, matches, &mask);
            Ok(Refinement {
                mean_error: mean_error(&refined, matches, &mask),
                pose: refined,
                inliers: mask,
            })
        }
        _ => Ok(Refinement {
            pose: *initial,
            inliers: vec![false; n],
            mean_error: 0.0,
        }),
    }
}

/// Rotates `b` by a Gaussian tangent perturbation with per-axis standard
/// deviation `sigma` radians.
pub(crate) fn perturb_direction<R: Rng>(b: &Vec3, sigma: f64, rng: &mut R) -> Vec3 {
    if sigma <= 0.0 {
        return *b;
    }
    let basis = tangent_basis(b);
    let n1: f64 = StandardNormal.sample(rng);
    let n2: f64 = StandardNormal.sample(rng);
    let d = basis.transpose() * Vector2::new(n1 * sigma, n2 * sigma);
    let a = d.norm();
    if a == 0.0 {
        return *b;
    }
    (b * a.cos() + d * (a.sin() / a)).normalize()
}

pub(crate) fn random_direction<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Point uniformly distributed over the map's segments by length.
pub(crate) fn sample_on_segments<R: Rng>(map: &LineMap3D, cumulative: &[f64], rng: &mut R) -> Vec3 {
    let total = *cumulative.last().unwrap();
    let x = rng.gen_range(0.0..total);
    let i = cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1);
    map.segments()[i].point_at(rng.gen_range(0.0..=1.0))
}

pub(crate) fn cumulative_lengths(map: &LineMap3D) -> Vec<f64> {
    map.segments()
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.length();
            Some(*acc)
        })
        .collect()
}

/// Synthetic correspondences: points sampled on the map segments, observed
/// from `gt_pose` with Gaussian angular noise, with a fraction of the
/// bearings replaced by uniformly random directions.
pub fn oracle_matcher(map: &LineMap3D, gt_pose: &Pose, n: usize, noise: f64, outlier_fraction: f64, seed: u64) -> Result<Vec<Correspondence>> {
    if !(0.0..=1.0).contains(&outlier_fraction) || !(noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be >= 0 and outlier fraction in [0, 1]".into()));
    }
    if map.segments().is_empty() {
        return Err(Error::InvalidArgument("map has no segments to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative = cumulative_lengths(map);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = sample_on_segments(map, &cumulative, &mut rng);
        let w = gt_pose.transform(&p);
        if w.norm() < 1e-3 {
            continue;
        }
        let b = perturb_direction(&w.normalize(), noise, &mut rng);
        out.push(Correspondence {
            bearing: UnitVector::new_unchecked(b),
            point: p,
        });
    }
    let n_out = (outlier_fraction * n as f64).round() as usize;
    for i in sample(&mut rng, n, n_out).into_iter() {
        out[i].bearing = UnitVector::new_unchecked(random_direction(&mut rng));
    }
    Ok(out)
}

/// Produces correspondences for a candidate pose. Implementations stand in
/// for descriptor matching between query and map keypoints.
pub trait Matcher: Sync {
    fn matches(&self, map: &LineMap3D, query_keypoints: &[Keypoint2D], candidate: &Pose) -> Vec<Correspondence>;
}

/// Matches keypoints by id, keeping pairs whose 3D point projects within
/// `window` radians of the 2D keypoint under the candidate pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdMatcher {
    pub window: f64,
}

impl Default for IdMatcher {
    fn default() -> Self {
        IdMatcher { window: 0.35 }
    }
}

impl Matcher for IdMatcher {
    fn matches(&self, map: &LineMap3D, query_keypoints: &[Keypoint2D], candidate: &Pose) -> Vec<Correspondence> {
        let mut by_id: Vec<(u64, Vec3)> = map.keypoints().iter().map(|k| (k.id, k.position)).collect();
        by_id.sort_by_key(|(id, _)| *id);
        query_keypoints
            .iter()
            .filter_map(|k| {
                let i = by_id.binary_search_by_key(&k.id, |(id, _)| *id).ok()?;
                let point = by_id[i].1;
                let c = Correspondence { bearing: k.direction, point };
                (angular_error(candidate, &c) <= self.window).then_some(c)
            })
            .collect()
    }
}
