//! Exact primitives on the unit sphere.
//!
//! Every panorama quantity (pixels, vanishing points, bearings) is a point on
//! the unit sphere. Poses follow the camera-from-world convention
//! `x_cam = R * x_world + t`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Cross-product norm below which two sphere points are treated as
/// coincident or antipodal.
pub const CROSS_EPS: f64 = 1e-8;
/// Distance below which a 3D point is considered to sit at the camera center.
pub const CENTER_EPS: f64 = 1e-6;
/// Slack for the lune membership test, so that boundary points are inside.
const BOUNDARY_EPS: f64 = 1e-12;
const ORTHO_EPS: f64 = 1e-8;

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector(Vec3);

impl UnitVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_vec(Vec3::new(x, y, z))
    }

    pub fn from_vec(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(UnitVector(v / n))
    }

    /// Wraps a vector that the caller guarantees is already unit length.
    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        UnitVector(v)
    }

    pub fn x_axis() -> Self {
        UnitVector(Vec3::x())
    }

    pub fn y_axis() -> Self {
        UnitVector(Vec3::y())
    }

    pub fn z_axis() -> Self {
        UnitVector(Vec3::z())
    }

    #[inline]
    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn into_vec(self) -> Vec3 {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    #[inline]
    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0)
    }

    /// Great-circle distance in radians.
    pub fn angle_to(&self, other: &UnitVector) -> f64 {
        angle_between(&self.0, &other.0)
    }

    pub fn rotate(&self, r: &Mat3) -> UnitVector {
        UnitVector((r * self.0).normalize())
    }

    /// True when the vector lies in the canonical hemisphere:
    /// `z > 0`, or `z = 0 and y > 0`, or `z = y = 0 and x > 0`.
    pub fn is_canonical(&self) -> bool {
        let v = &self.0;
        v.z > 0.0 || (v.z == 0.0 && (v.y > 0.0 || (v.y == 0.0 && v.x > 0.0)))
    }

    /// Representative of `{v, -v}` in the canonical hemisphere.
    pub fn canonical(&self) -> UnitVector {
        if self.is_canonical() {
            *self
        } else {
            -*self
        }
    }
}

impl std::ops::Neg for UnitVector {
    type Output = UnitVector;

    fn neg(self) -> UnitVector {
        UnitVector(-self.0)
    }
}

/// Angle between two (not necessarily unit) vectors, accurate over `[0, pi]`.
#[inline]
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// A minor great-circle arc from `s` to `e`.
///
/// Besides the endpoints the arc caches its plane normal `n` and the two
/// inward normals of the lune `Q(s, e)` spanned by `{s, e, n, -n}`, which is
/// all the point-to-arc distance needs.
#[derive(Debug, Clone, Copy)]
pub struct Arc2D {
    s: UnitVector,
    e: UnitVector,
    n: Vec3,
    lo: Vec3,
    hi: Vec3,
}

impl PartialEq for Arc2D {
    fn eq(&self, other: &Self) -> bool {
        self.s == other.s && self.e == other.e
    }
}

impl Arc2D {
    pub fn new(s: UnitVector, e: UnitVector) -> Result<Self> {
        let c = s.as_vec().cross(e.as_vec());
        let cn = c.norm();
        if !(cn > CROSS_EPS) {
            return Err(Error::DegenerateArc(cn));
        }
        let n = c / cn;
        Ok(Arc2D {
            s,
            e,
            n,
            lo: n.cross(s.as_vec()),
            hi: e.as_vec().cross(&n),
        })
    }

    pub fn from_vecs(s: Vec3, e: Vec3) -> Result<Self> {
        Arc2D::new(UnitVector::from_vec(s)?, UnitVector::from_vec(e)?)
    }

    #[inline]
    pub fn start(&self) -> &UnitVector {
        &self.s
    }

    #[inline]
    pub fn end(&self) -> &UnitVector {
        &self.e
    }

    /// Unit normal of the arc's great-circle plane, `s x e / |s x e|`.
    #[inline]
    pub fn normal(&self) -> &Vec3 {
        &self.n
    }

    /// Subtended angle in radians, in `(0, pi)`.
    pub fn angle(&self) -> f64 {
        self.s.angle_to(&self.e)
    }

    pub fn rotate(&self, r: &Mat3) -> Result<Arc2D> {
        Arc2D::new(self.s.rotate(r), self.e.rotate(r))
    }

    pub fn reversed(&self) -> Arc2D {
        Arc2D::new(self.e, self.s).expect("reversal preserves validity")
    }

    /// Point at angle `phi` from the start along the arc.
    pub fn point_at(&self, phi: f64) -> UnitVector {
        let u = self.n.cross(self.s.as_vec());
        UnitVector::new_unchecked((self.s.as_vec() * phi.cos() + u * phi.sin()).normalize())
    }

    #[inline]
    pub(crate) fn contains_in_lune(&self, x: &Vec3) -> bool {
        x.dot(&self.lo) >= -BOUNDARY_EPS && x.dot(&self.hi) >= -BOUNDARY_EPS
    }

    #[inline]
    pub(crate) fn lune_lo(&self) -> &Vec3 {
        &self.lo
    }

    #[inline]
    pub(crate) fn lune_hi(&self) -> &Vec3 {
        &self.hi
    }

    #[inline]
    pub(crate) fn start_vec(&self) -> &Vec3 {
        self.s.as_vec()
    }

    #[inline]
    pub(crate) fn end_vec(&self) -> &Vec3 {
        self.e.as_vec()
    }
}

/// A 3D line segment in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment3D {
    start: Vec3,
    end: Vec3,
}

impl Segment3D {
    pub fn new(start: Vec3, end: Vec3) -> Result<Self> {
        let len = (end - start).norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::ZeroLengthSegment);
        }
        Ok(Segment3D { start, end })
    }

    pub fn start(&self) -> &Vec3 {
        &self.start
    }

    pub fn end(&self) -> &Vec3 {
        &self.end
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> UnitVector {
        UnitVector::new_unchecked((self.end - self.start).normalize())
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.start + (self.end - self.start) * t
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (self.point_at(t) - p).norm()
    }

    /// Applies the rigid map `x -> r * x + t`.
    pub fn transform(&self, r: &Mat3, t: &Vec3) -> Segment3D {
        Segment3D {
            start: r * self.start + t,
            end: r * self.end + t,
        }
    }
}

/// Camera-from-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("translation is not finite".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose of a camera with orientation `rotation` located at world point `center`.
    pub fn from_center(rotation: Mat3, center: &Vec3) -> Result<Self> {
        Pose::new(rotation, -(rotation * center))
    }

    pub(crate) fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera position in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Verifies `R^T R = I` and `det R = +1` within 1e-8.
pub fn check_rotation(r: &Mat3) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NotARotation("non-finite entries".into()));
    }
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    if ortho > ORTHO_EPS {
        return Err(Error::NotARotation(format!(
            "R^T R deviates from identity by {ortho:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHO_EPS {
        return Err(Error::NotARotation(format!("det(R) = {det}")));
    }
    Ok(())
}

/// Spherical distance from `x` to the arc, in radians.
///
/// Inside the lune `Q(s, e)` this is the distance to the arc's great circle,
/// otherwise the distance to the nearer endpoint. Both branches are evaluated
/// with `atan2` so that values near 0 and near pi/2 keep full precision.
pub fn arc_distance(x: &UnitVector, arc: &Arc2D) -> f64 {
    arc_distance_vec(x.as_vec(), arc)
}

#[inline]
pub(crate) fn arc_distance_vec(x: &Vec3, arc: &Arc2D) -> f64 {
    if arc.contains_in_lune(x) {
        let c = x.dot(&arc.n);
        let tangential = (x - arc.n * c).norm();
        c.abs().atan2(tangential)
    } else {
        angle_between(x, arc.start_vec()).min(angle_between(x, arc.end_vec()))
    }
}

/// True iff `x` lies in the spherical quadrilateral with vertices
/// `{s, e, +-n}`; boundary points count as inside.
pub fn in_quadrilateral(x: &UnitVector, arc: &Arc2D) -> bool {
    arc.contains_in_lune(x.as_vec())
}

/// Spherical projection of a world point into the camera frame.
pub fn project_point(p: &Vec3, pose: &Pose) -> Result<UnitVector> {
    project_camera_point(&pose.transform(p), CENTER_EPS)
}

fn project_camera_point(c: &Vec3, center_eps: f64) -> Result<UnitVector> {
    let n = c.norm();
    if !(n > center_eps) {
        return Err(Error::PointAtCameraCenter(n));
    }
    Ok(UnitVector::new_unchecked(c / n))
}

/// Tolerances and limits for segment projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    /// Largest angle a single output arc may subtend.
    pub max_arc: f64,
    pub center_eps: f64,
    pub cross_eps: f64,
    /// Recursion limit for 3D bisection.
    pub max_depth: u32,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            max_arc: std::f64::consts::FRAC_PI_2,
            center_eps: CENTER_EPS,
            cross_eps: CROSS_EPS,
            max_depth: 32,
        }
    }
}

/// Arcs produced by projecting one 3D segment, plus the number of pieces
/// dropped because they projected degenerately.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentProjection {
    pub arcs: Vec<Arc2D>,
    pub degenerate_pieces: usize,
}

/// Projects a 3D segment onto the sphere, splitting it in 3D until every
/// piece subtends at most `max_arc`.
pub fn project_segment(seg: &Segment3D, pose: &Pose, max_arc: f64) -> Result<SegmentProjection> {
    let params = ProjectionParams {
        max_arc,
        ..ProjectionParams::default()
    };
    let mut out = SegmentProjection::default();
    out.degenerate_pieces = project_segment_into(seg, pose, &params, &mut out.arcs)?;
    Ok(out)
}

/// Appends the projected arcs of `seg` to `out` and returns the number of
/// dropped degenerate pieces.
pub fn project_segment_into(
    seg: &Segment3D,
    pose: &Pose,
    params: &ProjectionParams,
    out: &mut Vec<Arc2D>,
) -> Result<usize> {
    project_with_limit(seg, pose, params, params.max_arc.cos(), out)
}

/// `project_segment_into` with `cos(max_arc)` supplied by the caller.
pub(crate) fn project_with_limit(
    seg: &Segment3D,
    pose: &Pose,
    params: &ProjectionParams,
    cos_max: f64,
    out: &mut Vec<Arc2D>,
) -> Result<usize> {
    project_camera_segment(&pose.transform(seg.start()), &pose.transform(seg.end()), params, cos_max, out)
}

/// Projects a segment already expressed in camera coordinates.
pub(crate) fn project_camera_segment(
    a: &Vec3,
    b: &Vec3,
    params: &ProjectionParams,
    cos_max: f64,
    out: &mut Vec<Arc2D>,
) -> Result<usize> {
    for p in [a, b] {
        if !(p.norm_squared() > params.center_eps * params.center_eps) {
            return Err(Error::PointAtCameraCenter(p.norm()));
        }
    }
    let mut dropped = 0;
    bisect(a, b, params, cos_max, 0, out, &mut dropped);
    Ok(dropped)
}

fn bisect(a: &Vec3, b: &Vec3, params: &ProjectionParams, cos_max: f64, depth: u32, out: &mut Vec<Arc2D>, dropped: &mut usize) {
    let na = a.norm();
    let nb = b.norm();
    if !(na > params.center_eps) || !(nb > params.center_eps) {
        *dropped += 1;
        return;
    }
    let ua = a / na;
    let ub = b / nb;
    if ua.dot(&ub) >= cos_max {
        let cross = ua.cross(&ub);
        let cn = cross.norm();
        if cn > params.cross_eps {
            let n = cross / cn;
            out.push(Arc2D {
                s: UnitVector::new_unchecked(ua),
                e: UnitVector::new_unchecked(ub),
                n,
                lo: n.cross(&ua),
                hi: ub.cross(&n),
            });
        } else {
            *dropped += 1;
        }
        return;
    }
    if depth >= params.max_depth {
        *dropped += 1;
        return;
    }
    let mid = (a + b) * 0.5;
    bisect(a, &mid, params, cos_max, depth + 1, out, dropped);
    bisect(&mid, b, params, cos_max, depth + 1, out, dropped);
}

/// Geodesic angle between two rotations, in degrees, in `[0, 180]`.
///
/// Equal to `acos((tr(Ra^T Rb) - 1) / 2)`. The half angle is recovered from
/// the chordal distance `|Ra - Rb|_F = 2 sqrt(2) sin(theta / 2)` so small
/// angles keep full precision.
pub fn rotation_angle(ra: &Mat3, rb: &Mat3) -> f64 {
    let cos = (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let half_sin = (ra - rb).norm() / (2.0 * std::f64::consts::SQRT_2);
    let half_cos = ((1.0 + cos) / 2.0).max(0.0).sqrt();
    (2.0 * half_sin.atan2(half_cos)).to_degrees().clamp(0.0, 180.0)
}

/// Rotation by `angle` radians about `axis` (normalized internally).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let axis = nalgebra::Unit::new_normalize(*axis);
    *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
}

/// World-from-camera orientation for yaw (about z), then pitch (about y),
/// then roll (about x), all in radians.
pub fn orientation_from_ypr(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    axis_angle(&Vec3::z(), yaw) * axis_angle(&Vec3::y(), pitch) * axis_angle(&Vec3::x(), roll)
}
