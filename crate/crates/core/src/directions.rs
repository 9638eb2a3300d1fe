//! Principal directions: vanishing points on the query sphere and dominant
//! segment directions in the map, both found by voting on an icosahedral
//! grid, plus assignment of lines to a direction triplet.

use crate::error::{Error, Result};
use crate::icosphere::Icosphere;
use crate::lines::{LineMap3D, QueryLines2D};
use crate::sphere::{Arc2D, Segment3D, UnitVector, Vec3, CROSS_EPS};

pub const DEFAULT_K_2D: usize = 20;
pub const DEFAULT_K_3D: usize = 3;
pub const DEFAULT_GRID_LEVEL: u32 = 3;
/// Default line-to-direction assignment tolerance (10 degrees).
pub const DEFAULT_LINE_TOL: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Top-voted directions, ordered by descending vote count.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalDirections {
    pub directions: Vec<UnitVector>,
    pub votes: Vec<usize>,
    /// Number of directions asked for; more than `directions.len()` when the
    /// grid had fewer non-empty cells.
    pub requested: usize,
}

pub type PrincipalDirections2D = PrincipalDirections;
pub type PrincipalDirections3D = PrincipalDirections;

impl PrincipalDirections {
    pub fn is_complete(&self) -> bool {
        self.directions.len() >= self.requested
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Directions given explicitly, all with one vote.
    pub fn from_directions(directions: Vec<UnitVector>) -> Self {
        let n = directions.len();
        PrincipalDirections {
            directions: directions.into_iter().map(|d| d.canonical()).collect(),
            votes: vec![1; n],
            requested: n,
        }
    }
}

/// Voting grid over antipodal classes of icosphere vertices.
///
/// A vote for `d` lands in the class of the vertex nearest to `d` or `-d`,
/// and is accumulated sign-aligned with that class representative, so that
/// directions near the hemisphere boundary never split their votes.
#[derive(Debug, Clone)]
pub struct VoteGrid {
    reps: Vec<Vec3>,
    cell_radius: f64,
}

impl VoteGrid {
    pub fn new(level: u32) -> Self {
        let ico = Icosphere::new(level);
        let anti = ico.antipodes();
        let verts = ico.vertices();
        let reps = (0..verts.len())
            .filter(|&i| i < anti[i])
            .map(|i| {
                let v = verts[i];
                if UnitVector::new_unchecked(v).is_canonical() {
                    v
                } else {
                    verts[anti[i]]
                }
            })
            .collect();
        VoteGrid {
            reps,
            cell_radius: ico.cell_radius(),
        }
    }

    pub fn cells(&self) -> usize {
        self.reps.len()
    }

    /// Largest angle from a direction to the center of its cell.
    pub fn cell_radius(&self) -> f64 {
        self.cell_radius
    }

    /// Cell of the line through `d`, and `d` sign-aligned with its center.
    pub fn cell_of(&self, d: &Vec3) -> (usize, Vec3) {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        let mut best_dot = 0.0;
        for (i, r) in self.reps.iter().enumerate() {
            let dot = r.dot(d);
            if dot.abs() > best_abs {
                best_abs = dot.abs();
                best_dot = dot;
                best = i;
            }
        }
        (best, if best_dot < 0.0 { -d } else { *d })
    }
}

/// Bandwidth of the flat-kernel mode refinement inside a winning cell.
const MODE_BANDWIDTH: f64 = 2.0 * std::f64::consts::PI / 180.0;
const MODE_ITERATIONS: usize = 10;

struct Ballot {
    votes: Vec<Vec<Vec3>>,
}

impl Ballot {
    fn new(cells: usize) -> Self {
        Ballot {
            votes: vec![Vec::new(); cells],
        }
    }

    fn cast(&mut self, grid: &VoteGrid, d: &Vec3) {
        let (cell, aligned) = grid.cell_of(d);
        self.votes[cell].push(aligned);
    }

    fn top(&self, k: usize) -> PrincipalDirections {
        let mut order: Vec<usize> = (0..self.votes.len()).filter(|&c| !self.votes[c].is_empty()).collect();
        order.sort_by(|&a, &b| self.votes[b].len().cmp(&self.votes[a].len()).then(a.cmp(&b)));
        order.truncate(k);
        PrincipalDirections {
            directions: order
                .iter()
                .map(|&c| UnitVector::new_unchecked(cell_mode(&self.votes[c])).canonical())
                .collect(),
            votes: order.iter().map(|&c| self.votes[c].len()).collect(),
            requested: k,
        }
    }
}

/// Centroid of the votes, then shifted to the mean of the votes within
/// `MODE_BANDWIDTH` until it stops moving. Stray intersections from
/// unrelated line pairs that share the cell do not bias the estimate.
fn cell_mode(votes: &[Vec3]) -> Vec3 {
    let mut center = votes.iter().sum::<Vec3>().normalize();
    let cos_bw = MODE_BANDWIDTH.cos();
    for _ in 0..MODE_ITERATIONS {
        let near: Vec3 = votes.iter().filter(|v| v.dot(&center) >= cos_bw).sum();
        let norm = near.norm();
        if norm == 0.0 {
            break;
        }
        let next = near / norm;
        if next == center {
            break;
        }
        center = next;
    }
    center
}

/// Vanishing points by pairwise great-circle intersection voting.
///
/// Every unordered pair of arcs votes for the intersection of their great
/// circles; near-coplanar pairs cast no vote. Returns the centroids of the
/// `k_2d` most voted cells. When fewer cells are non-empty the result holds
/// all of them and reports `is_complete() == false`; fewer than three is an
/// error since no triplet can be formed.
pub fn vanishing_points_2d(query: &QueryLines2D, k_2d: usize, grid_level: u32) -> Result<PrincipalDirections2D> {
    vanishing_points_with_grid(query, k_2d, &VoteGrid::new(grid_level))
}

pub fn vanishing_points_with_grid(query: &QueryLines2D, k_2d: usize, grid: &VoteGrid) -> Result<PrincipalDirections2D> {
    let n = query.arcs.len();
    if n < 3 {
        return Err(Error::TooFewLines { needed: 3, got: n });
    }
    if k_2d < 3 {
        return Err(Error::InvalidArgument(format!("k_2d must be >= 3, got {k_2d}")));
    }
    let mut ballot = Ballot::new(grid.cells());
    for i in 0..n {
        let ni = query.arcs[i].normal();
        for j in (i + 1)..n {
            let c = ni.cross(query.arcs[j].normal());
            let cn = c.norm();
            if cn > CROSS_EPS {
                ballot.cast(grid, &(c / cn));
            }
        }
    }
    let top = ballot.top(k_2d);
    if top.len() < 3 {
        return Err(Error::TooFewDirections {
            requested: k_2d,
            found: top.len(),
        });
    }
    Ok(top)
}

/// Dominant 3D segment directions by direction voting.
pub fn directions_3d(map: &LineMap3D, k_3d: usize, grid_level: u32) -> Result<PrincipalDirections3D> {
    directions_3d_with_grid(map, k_3d, &VoteGrid::new(grid_level))
}

pub fn directions_3d_with_grid(map: &LineMap3D, k_3d: usize, grid: &VoteGrid) -> Result<PrincipalDirections3D> {
    if k_3d == 0 {
        return Err(Error::InvalidArgument("k_3d must be positive".into()));
    }
    let mut ballot = Ballot::new(grid.cells());
    for s in map.segments() {
        ballot.cast(grid, s.direction().as_vec());
    }
    let top = ballot.top(k_3d);
    if !top.is_complete() {
        return Err(Error::TooFewDirections {
            requested: k_3d,
            found: top.len(),
        });
    }
    Ok(top)
}

/// Index of the best direction within `tol` by the given residual, ties to
/// the lower index.
fn best_direction(residuals: [f64; 3], tol: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in residuals.iter().enumerate() {
        if *r < tol && best.map_or(true, |b| *r < residuals[b]) {
            best = Some(i);
        }
    }
    best
}

/// Group of an arc: the direction its great circle passes closest to.
pub fn assign_arc(arc: &Arc2D, triplet: &[UnitVector; 3], tol: f64) -> Option<usize> {
    let n = arc.normal();
    let res = [0, 1, 2].map(|i| n.dot(triplet[i].as_vec()).clamp(-1.0, 1.0).asin().abs());
    best_direction(res, tol)
}

/// Group of a segment: the direction closest to its line direction, up to sign.
pub fn assign_segment(seg: &Segment3D, triplet: &[UnitVector; 3], tol: f64) -> Option<usize> {
    let d = seg.direction();
    let res = [0, 1, 2].map(|i| d.dot(&triplet[i]).abs().min(1.0).acos());
    best_direction(res, tol)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < std::f64::consts::FRAC_PI_4) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, pi/4), got {tol}")));
    }
    Ok(())
}

/// Splits the query arcs into three groups by the triplet; unmatched arcs are dropped.
pub fn assign_lines_2d(query: &QueryLines2D, triplet: &[UnitVector; 3], tol: f64) -> Result<[Vec<Arc2D>; 3]> {
    check_tol(tol)?;
    let mut groups: [Vec<Arc2D>; 3] = Default::default();
    for arc in &query.arcs {
        if let Some(g) = assign_arc(arc, triplet, tol) {
            groups[g].push(*arc);
        }
    }
    Ok(groups)
}

/// Splits the map segments into three groups by the triplet.
pub fn assign_lines_3d(map: &LineMap3D, triplet: &[UnitVector; 3], tol: f64) -> Result<[Vec<Segment3D>; 3]> {
    check_tol(tol)?;
    let mut groups: [Vec<Segment3D>; 3] = Default::default();
    for seg in map.segments() {
        if let Some(g) = assign_segment(seg, triplet, tol) {
            groups[g].push(*seg);
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{axis_angle, Segment3D};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uv(x: f64, y: f64, z: f64) -> UnitVector {
        UnitVector::new(x, y, z).unwrap()
    }

    fn axes() -> [UnitVector; 3] {
        [UnitVector::x_axis(), UnitVector::y_axis(), UnitVector::z_axis()]
    }

    /// Arc on the great circle with normal `n`, starting at `a` (which must be
    /// orthogonal to `n`) and spanning `span` radians.
    fn arc_on(n: Vec3, a: Vec3, span: f64) -> Arc2D {
        let n = n.normalize();
        let a = a.normalize();
        let b = n.cross(&a);
        Arc2D::from_vecs(a, a * span.cos() + b * span.sin()).unwrap()
    }

    /// `m` meridian arcs through the +-z poles.
    fn meridians(m: usize) -> Vec<Arc2D> {
        (0..m)
            .map(|i| {
                let phi = PI * (i as f64 + 0.3) / m as f64;
                let n = Vec3::new(-phi.sin(), phi.cos(), 0.0);
                arc_on(n, Vec3::new(phi.cos(), phi.sin(), 0.0), 0.6)
            })
            .collect()
    }

    /// `m` great circles through the +-x poles.
    fn x_bundle(m: usize) -> Vec<Arc2D> {
        (0..m)
            .map(|i| {
                let phi = PI * (i as f64 + 0.55) / m as f64;
                let n = Vec3::new(0.0, -phi.sin(), phi.cos());
                arc_on(n, Vec3::new(0.0, phi.cos(), phi.sin()), 0.6)
            })
            .collect()
    }

    #[test]
    fn vote_grid_has_one_cell_per_antipodal_pair() {
        let g = VoteGrid::new(3);
        assert_eq!(g.cells(), 321);
        let d = Vec3::new(0.3, -0.4, 0.5).normalize();
        assert_eq!(g.cell_of(&d).0, g.cell_of(&-d).0);
    }

    #[test]
    fn meridians_vote_for_the_pole() {
        let q = QueryLines2D::new(meridians(8));
        let vp = vanishing_points_2d(&q, 3, 3);
        // every pair meets at the pole, so only one cell is populated
        assert!(matches!(vp, Err(Error::TooFewDirections { found: 1, .. })));

        let mut arcs = meridians(8);
        arcs.extend(x_bundle(3));
        let vp = vanishing_points_2d(&QueryLines2D::new(arcs), 3, 3).unwrap();
        // 28 meridian pairs plus a few cross-bundle intersections near the pole
        assert!(vp.votes[0] >= 28);
        assert!(vp.directions[0].angle_to(&UnitVector::z_axis()) < 1e-12);
    }

    #[test]
    fn two_bundles_give_two_vanishing_points() {
        let mut arcs = meridians(10);
        arcs.extend(x_bundle(10));
        // exact enumeration oracle: pairs within a bundle meet at the bundle's pole
        let mut at_z = 0;
        let mut at_x = 0;
        for i in 0..arcs.len() {
            for j in (i + 1)..arcs.len() {
                let c = arcs[i].normal().cross(arcs[j].normal()).normalize();
                if c.z.abs() > 1.0 - 1e-12 {
                    at_z += 1;
                } else if c.x.abs() > 1.0 - 1e-12 {
                    at_x += 1;
                }
            }
        }
        assert_eq!((at_z, at_x), (45, 45));

        let vp = vanishing_points_2d(&QueryLines2D::new(arcs), 3, 3).unwrap();
        assert_eq!(&vp.votes[..2], &[45, 45]);
        let found: Vec<UnitVector> = vp.directions[..2].to_vec();
        assert!(found.iter().any(|d| d.angle_to(&UnitVector::z_axis()) < 1e-9));
        assert!(found.iter().any(|d| d.angle_to(&UnitVector::x_axis()) < 1e-9));
        assert!(vp.directions.iter().all(|d| d.is_canonical()));
    }

    #[test]
    fn too_few_arcs() {
        let q = QueryLines2D::new(meridians(2));
        assert_eq!(vanishing_points_2d(&q, 3, 3), Err(Error::TooFewLines { needed: 3, got: 2 }));
    }

    fn box_wireframe() -> LineMap3D {
        let (a, b, c) = (4.0, 3.0, 2.5);
        let corners = |x: f64, y: f64, z: f64| Vec3::new(x * a, y * b, z * c);
        let mut segs = Vec::new();
        for &(y, z) in &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            segs.push(Segment3D::new(corners(0.0, y, z), corners(1.0, y, z)).unwrap());
            segs.push(Segment3D::new(corners(y, 0.0, z), corners(y, 1.0, z)).unwrap());
            segs.push(Segment3D::new(corners(y, z, 0.0), corners(y, z, 1.0)).unwrap());
        }
        LineMap3D::from_segments(segs).unwrap()
    }

    #[test]
    fn box_directions_are_the_axes() {
        let d = directions_3d(&box_wireframe(), 3, 3).unwrap();
        assert_eq!(d.votes, vec![4, 4, 4]);
        for axis in axes() {
            assert!(d.directions.iter().any(|x| x.angle_to(&axis) < 1e-12));
        }
    }

    #[test]
    fn single_direction_scene() {
        let dir = Vec3::new(1.0, 1.0, 1.0).normalize();
        let segs = (0..5)
            .map(|i| {
                let o = Vec3::new(i as f64, 0.0, 0.0);
                Segment3D::new(o, o + dir * 2.0).unwrap()
            })
            .collect();
        let map = LineMap3D::from_segments(segs).unwrap();
        let d = directions_3d(&map, 1, 3).unwrap();
        assert!(d.directions[0].angle_to(&UnitVector::from_vec(dir).unwrap()) < 1e-12);
        assert!(matches!(directions_3d(&map, 3, 3), Err(Error::TooFewDirections { requested: 3, found: 1 })));
    }

    #[test]
    fn assign_arc_examples() {
        let tol = DEFAULT_LINE_TOL;
        let meridian = arc_on(Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.3), 0.5);
        assert_eq!(assign_arc(&meridian, &axes(), tol), Some(2));

        let n = Vec3::new(1.0, 1.0, 1.0).normalize();
        let a = n.cross(&Vec3::x()).normalize();
        let skew = arc_on(n, a, 0.5);
        assert_eq!(assign_arc(&skew, &axes(), tol), None);

        // plane normal orthogonal to both x and y (the equator)
        let equator = arc_on(Vec3::z(), Vec3::x(), 0.5);
        assert_eq!(assign_arc(&equator, &axes(), tol), Some(0));

        // closer to y than x, both within tolerance
        let n = Vec3::new(0.1, 0.05, 1.0).normalize();
        let a = n.cross(&Vec3::x()).normalize();
        let tilted = arc_on(n, a, 0.5);
        assert_eq!(assign_arc(&tilted, &axes(), tol), Some(1));
    }

    #[test]
    fn assign_segment_examples() {
        let tol = DEFAULT_LINE_TOL;
        let s = |d: Vec3| Segment3D::new(Vec3::zeros(), d).unwrap();
        assert_eq!(assign_segment(&s(Vec3::new(-2.0, 0.0, 0.0)), &axes(), tol), Some(0));
        assert_eq!(assign_segment(&s(Vec3::new(1.0, 1.0, 0.0)), &axes(), tol), None);
        let nine = 9f64.to_radians();
        assert_eq!(assign_segment(&s(Vec3::new(nine.cos(), nine.sin(), 0.0)), &axes(), tol), Some(0));
    }

    #[test]
    fn assign_rejects_bad_tolerance() {
        let q = QueryLines2D::new(meridians(3));
        assert!(assign_lines_2d(&q, &axes(), 0.0).is_err());
        assert!(assign_lines_2d(&q, &axes(), 1.0).is_err());
    }

    fn random_arc() -> impl Strategy<Value = Arc2D> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter_map("valid", |(a, b, c, d, e, f)| Arc2D::from_vecs(Vec3::new(a, b, c), Vec3::new(d, e, f)).ok())
    }

    proptest! {
        #[test]
        fn assignment_partitions(arcs in prop::collection::vec(random_arc(), 1..40), tol in 0.01f64..0.7) {
            let q = QueryLines2D::new(arcs.clone());
            let trip = [uv(1.0, 0.2, 0.0), uv(0.0, 1.0, 0.1), uv(0.1, 0.0, 1.0)];
            let groups = assign_lines_2d(&q, &trip, tol).unwrap();
            let total: usize = groups.iter().map(|g| g.len()).sum();
            let mut assigned = 0;
            for arc in &arcs {
                let res: Vec<f64> = trip.iter().map(|p| arc.normal().dot(p.as_vec()).clamp(-1.0, 1.0).asin().abs()).collect();
                match assign_arc(arc, &trip, tol) {
                    Some(g) => {
                        assigned += 1;
                        prop_assert!(res[g] < tol);
                        prop_assert!(res.iter().all(|r| *r >= res[g]));
                    }
                    None => prop_assert!(res.iter().all(|r| *r >= tol)),
                }
            }
            prop_assert_eq!(total, assigned);
        }

        #[test]
        fn directions_invariant_to_segment_reversal(seed_dirs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 3..30)) {
            let segs: Vec<Segment3D> = seed_dirs
                .iter()
                .filter(|(x, y, z)| x * x + y * y + z * z > 1e-2)
                .map(|&(x, y, z)| Segment3D::new(Vec3::zeros(), Vec3::new(x, y, z)).unwrap())
                .collect();
            prop_assume!(segs.len() >= 3);
            let flipped: Vec<Segment3D> = segs.iter().map(|s| Segment3D::new(*s.end(), *s.start()).unwrap()).collect();
            let a = directions_3d(&LineMap3D::from_segments(segs).unwrap(), 3, 3);
            let b = directions_3d(&LineMap3D::from_segments(flipped).unwrap(), 3, 3);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a.votes, &b.votes);
                    for (x, y) in a.directions.iter().zip(&b.directions) {
                        prop_assert!(x.angle_to(y) < 1e-12);
                        prop_assert!(x.is_canonical());
                    }
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "mismatched outcomes"),
            }
        }

        #[test]
        fn directions_3d_rotation_equivariant(axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0), angle in -PI..PI) {
            let q = axis_angle(&Vec3::new(axis.0, axis.1, axis.2), angle);
            let map = box_wireframe();
            let rotated: Vec<Segment3D> = map.segments().iter().map(|s| s.transform(&q, &Vec3::zeros())).collect();
            let d0 = directions_3d(&map, 3, 3).unwrap();
            let d1 = directions_3d(&LineMap3D::from_segments(rotated).unwrap(), 3, 3).unwrap();
            let radius = VoteGrid::new(3).cell_radius();
            for d in &d0.directions {
                let qd = d.rotate(&q);
                prop_assert!(d1.directions.iter().any(|x| x.dot(&qd).abs().min(1.0).acos() < radius));
            }
        }
    }
}
