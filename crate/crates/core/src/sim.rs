//! Synthetic line maps and rendered panoramic observations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lines::{Keypoint2D, Keypoint3D, LineMap3D, QueryLines2D};
use crate::refine::{cumulative_lengths, perturb_direction, random_direction, sample_on_segments};
use crate::sphere::{axis_angle, orientation_from_ypr, project_segment_into, Arc2D, Pose, ProjectionParams, Segment3D, UnitVector, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    BoxRoom,
    ManhattanMultiRoom,
    DenseParallel,
    RotSymmetric,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::BoxRoom, SceneKind::ManhattanMultiRoom, SceneKind::DenseParallel, SceneKind::RotSymmetric];

    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::BoxRoom => "box_room",
            SceneKind::ManhattanMultiRoom => "manhattan_multi_room",
            SceneKind::DenseParallel => "dense_parallel",
            SceneKind::RotSymmetric => "rot_symmetric",
        }
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene_kind: SceneKind,
    /// Room size in meters along x, y, z.
    pub extents: [f64; 3],
    pub n_clutter_lines: usize,
    /// Asymmetric lines added to `rot_symmetric` scenes.
    pub n_marker_lines: usize,
    /// Per-axis standard deviation of endpoint noise, radians.
    pub endpoint_noise: f64,
    /// Random arcs appended, as a fraction of the rendered arcs.
    pub outlier_arcs: f64,
    pub drop_fraction: f64,
    pub n_keypoints: usize,
    /// Per-axis standard deviation of keypoint bearing noise, radians.
    pub keypoint_noise: f64,
    pub keypoint_outliers: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scene_kind: SceneKind::BoxRoom,
            extents: [8.0, 6.0, 3.0],
            n_clutter_lines: 20,
            n_marker_lines: 4,
            endpoint_noise: 0.0,
            outlier_arcs: 0.0,
            drop_fraction: 0.0,
            n_keypoints: 100,
            keypoint_noise: 0.0,
            keypoint_outliers: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidArgument("extents must be positive".into()));
        }
        for (name, f) in [
            ("outlier_arcs", self.outlier_arcs),
            ("drop_fraction", self.drop_fraction),
            ("keypoint_outliers", self.keypoint_outliers),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if !(self.endpoint_noise >= 0.0 && self.keypoint_noise >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const STREAM_SCENE: u64 = 1;
const STREAM_POSE: u64 = 2;
const STREAM_RENDER: u64 = 3;

fn seg(a: Vec3, b: Vec3) -> Segment3D {
    Segment3D::new(a, b).expect("generated segments have positive length")
}

fn box_edges(lo: Vec3, hi: Vec3, out: &mut Vec<Segment3D>) {
    for k in 0..3 {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        for (ci, cj) in [(lo[i], lo[j]), (hi[i], lo[j]), (hi[i], hi[j]), (lo[i], hi[j])] {
            let mut a = Vec3::zeros();
            a[i] = ci;
            a[j] = cj;
            a[k] = lo[k];
            let mut b = a;
            b[k] = hi[k];
            out.push(seg(a, b));
        }
    }
}

/// Axis-aligned segment strictly inside `[lo, hi]`.
fn free_segment(rng: &mut ChaCha8Rng, lo: &Vec3, hi: &Vec3) -> Segment3D {
    let inset = 0.1;
    let k = rng.gen_range(0..3);
    let span = hi[k] - lo[k] - 2.0 * inset;
    let shortest = 0.3f64.min(0.5 * span);
    let len = rng.gen_range(shortest..=(0.6 * span).max(shortest));
    let mut a = Vec3::zeros();
    for i in 0..3 {
        a[i] = rng.gen_range(lo[i] + inset..hi[i] - inset);
    }
    a[k] = rng.gen_range(lo[k] + inset..=hi[k] - inset - len);
    let mut b = a;
    b[k] += len;
    seg(a, b)
}

/// A random wall: the horizontal axis it runs along, and a point on it
/// offset `depth` into the room.
fn wall(rng: &mut ChaCha8Rng, lo: &Vec3, hi: &Vec3, depth: f64) -> (usize, Vec3) {
    let side = rng.gen_range(0..4);
    let (along, normal) = if side < 2 { (1, 0) } else { (0, 1) };
    let mut p = Vec3::new(0.0, 0.0, lo.z);
    p[normal] = if side % 2 == 0 { lo[normal] + depth } else { hi[normal] - depth };
    (along, p)
}

/// `n` axis-aligned clutter segments: door frames and shelves along the
/// walls, and free-standing segments.
fn clutter(rng: &mut ChaCha8Rng, lo: &Vec3, hi: &Vec3, n: usize) -> Vec<Segment3D> {
    let mut out = Vec::with_capacity(n);
    let height = hi.z - lo.z;
    while out.len() < n {
        match rng.gen_range(0..3) {
            0 if n - out.len() >= 3 => {
                let (k, mut a) = wall(rng, lo, hi, 0.0);
                let span = hi[k] - lo[k];
                let w = rng.gen_range(0.8..1.0f64).min(0.4 * span);
                let h = rng.gen_range(1.9..2.2f64).min(0.8 * height);
                a[k] = rng.gen_range(lo[k] + 0.1 * span..hi[k] - 0.1 * span - w);
                let mut b = a;
                b[k] += w;
                let up = Vec3::z() * h;
                out.push(seg(a, a + up));
                out.push(seg(b, b + up));
                out.push(seg(a + up, b + up));
            }
            1 => {
                let depth = rng.gen_range(0.05..0.4);
                let (k, mut a) = wall(rng, lo, hi, depth);
                let span = hi[k] - lo[k] - 0.2;
                let len = rng.gen_range(0.3f64.min(0.5 * span)..=0.5 * span);
                a[k] = rng.gen_range(lo[k] + 0.1..=hi[k] - 0.1 - len);
                a.z = lo.z + rng.gen_range(0.3..0.9) * height;
                let mut b = a;
                b[k] += len;
                out.push(seg(a, b));
            }
            _ => out.push(free_segment(rng, lo, hi)),
        }
    }
    out
}

fn rotate_about_z(s: &Segment3D, quarter_turns: u32) -> Segment3D {
    let turn = |p: &Vec3| (0..quarter_turns).fold(*p, |p, _| Vec3::new(-p.y, p.x, p.z));
    seg(turn(s.start()), turn(s.end()))
}

/// Rooms are centered on the z axis in x and y and stand on `z = 0`.
pub fn generate_scene(cfg: &SimConfig) -> Result<LineMap3D> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_SCENE);
    let ext = Vec3::from(cfg.extents);
    let mut lo = Vec3::new(-ext.x / 2.0, -ext.y / 2.0, 0.0);
    let mut hi = Vec3::new(ext.x / 2.0, ext.y / 2.0, ext.z);
    let mut segs = Vec::new();
    match cfg.scene_kind {
        SceneKind::BoxRoom => {
            box_edges(lo, hi, &mut segs);
            segs.extend(clutter(&mut rng, &lo, &hi, cfg.n_clutter_lines));
        }
        SceneKind::ManhattanMultiRoom => {
            let rooms = rng.gen_range(2..=4usize);
            let width = ext.x / rooms as f64;
            // each wall plane between rooms contributes its rectangle once
            for w in 0..=rooms {
                let x = lo.x + w as f64 * width;
                segs.push(seg(Vec3::new(x, lo.y, lo.z), Vec3::new(x, hi.y, lo.z)));
                segs.push(seg(Vec3::new(x, lo.y, hi.z), Vec3::new(x, hi.y, hi.z)));
                segs.push(seg(Vec3::new(x, lo.y, lo.z), Vec3::new(x, lo.y, hi.z)));
                segs.push(seg(Vec3::new(x, hi.y, lo.z), Vec3::new(x, hi.y, hi.z)));
            }
            for r in 0..rooms {
                let x0 = lo.x + r as f64 * width;
                let x1 = x0 + width;
                for (y, z) in [(lo.y, lo.z), (hi.y, lo.z), (hi.y, hi.z), (lo.y, hi.z)] {
                    segs.push(seg(Vec3::new(x0, y, z), Vec3::new(x1, y, z)));
                }
            }
            // door frames in the interior walls
            for w in 1..rooms {
                let x = lo.x + w as f64 * width;
                let door_w = 0.9f64.min(0.4 * ext.y);
                let door_h = 2.0f64.min(0.8 * ext.z);
                let y0 = rng.gen_range(lo.y + 0.1..hi.y - 0.1 - door_w);
                segs.push(seg(Vec3::new(x, y0, 0.0), Vec3::new(x, y0, door_h)));
                segs.push(seg(Vec3::new(x, y0 + door_w, 0.0), Vec3::new(x, y0 + door_w, door_h)));
                segs.push(seg(Vec3::new(x, y0, door_h), Vec3::new(x, y0 + door_w, door_h)));
            }
            segs.extend(clutter(&mut rng, &lo, &hi, cfg.n_clutter_lines));
        }
        SceneKind::DenseParallel => {
            box_edges(lo, hi, &mut segs);
            segs.extend(clutter(&mut rng, &lo, &hi, cfg.n_clutter_lines));
            // a bundle of vertical lines on the +x wall, like a radiator or blinds
            let n = 12;
            let spacing = 0.15;
            let width = spacing * (n - 1) as f64;
            let y0 = rng.gen_range(lo.y + 0.2..(hi.y - 0.2 - width).max(lo.y + 0.21));
            let (z0, z1) = (0.2 * ext.z, 0.8 * ext.z);
            for i in 0..n {
                let y = (y0 + i as f64 * spacing).min(hi.y);
                segs.push(seg(Vec3::new(hi.x, y, z0), Vec3::new(hi.x, y, z1)));
            }
        }
        SceneKind::RotSymmetric => {
            let side = ext.x.max(ext.y);
            lo = Vec3::new(-side / 2.0, -side / 2.0, 0.0);
            hi = Vec3::new(side / 2.0, side / 2.0, ext.z);
            box_edges(lo, hi, &mut segs);
            for s in clutter(&mut rng, &lo, &hi, cfg.n_clutter_lines) {
                for q in 0..4 {
                    segs.push(rotate_about_z(&s, q));
                }
            }
            for _ in 0..cfg.n_marker_lines {
                segs.push(free_segment(&mut rng, &lo, &hi));
            }
        }
    }
    let map = LineMap3D::new(segs, lo, hi, Vec::new())?;
    let cumulative = cumulative_lengths(&map);
    let keypoints = (0..cfg.n_keypoints as u64)
        .map(|id| Keypoint3D {
            position: sample_on_segments(&map, &cumulative, &mut rng),
            id,
        })
        .collect();
    Ok(map.with_keypoints(keypoints))
}

/// Closest distance from `c` to any map segment.
pub fn clearance(map: &LineMap3D, c: &Vec3) -> f64 {
    map.segments().iter().map(|s| s.distance_to_point(c)).fold(f64::INFINITY, f64::min)
}

/// Minimum clearance between a sampled camera and the scene lines.
pub const MIN_CLEARANCE: f64 = 0.1;

/// Random camera inside the central 70% of the bounding box with uniform yaw
/// and pitch and roll within 10 degrees. Up to three positions are tried.
pub fn sample_pose(map: &LineMap3D, cfg: &SimConfig) -> Result<Pose> {
    let mut rng = cfg.rng(STREAM_POSE);
    let ext = map.extents();
    let tilt = 10f64.to_radians();
    for _ in 0..3 {
        let f = Vec3::new(rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85));
        let c = map.bbox_min() + ext.component_mul(&f);
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let pitch = rng.gen_range(-tilt..tilt);
        let roll = rng.gen_range(-tilt..tilt);
        if clearance(map, &c) >= MIN_CLEARANCE {
            return Pose::from_center(orientation_from_ypr(yaw, pitch, roll).transpose(), &c);
        }
    }
    Err(Error::CameraOnLine(3))
}

fn random_arc(rng: &mut ChaCha8Rng) -> Arc2D {
    loop {
        let n = random_direction(rng);
        let s = random_direction(rng);
        let s = s - n * n.dot(&s);
        if s.norm() < 1e-6 {
            continue;
        }
        let s = s.normalize();
        let extent = rng.gen_range(5f64..=60.0).to_radians();
        let e = axis_angle(&n, extent) * s;
        if let Ok(a) = Arc2D::from_vecs(s, e) {
            return a;
        }
    }
}

/// Observes `map` from `pose`: projection, random drop-out, endpoint noise,
/// outlier arcs, and noisy keypoint bearings.
pub fn render_query(map: &LineMap3D, pose: &Pose, cfg: &SimConfig) -> Result<QueryLines2D> {
    cfg.validate()?;
    let c = pose.center();
    if clearance(map, &c) < crate::sphere::CENTER_EPS {
        return Err(Error::CameraOnLine(1));
    }
    let mut rng = cfg.rng(STREAM_RENDER);
    let mut clean = Vec::new();
    for s in map.segments() {
        project_segment_into(s, pose, &ProjectionParams::default(), &mut clean)?;
    }
    let n_drop = (cfg.drop_fraction * clean.len() as f64).round() as usize;
    let mut dropped = vec![false; clean.len()];
    for i in sample(&mut rng, clean.len(), n_drop).into_iter() {
        dropped[i] = true;
    }
    let mut arcs = Vec::with_capacity(clean.len());
    for (a, _) in clean.iter().zip(&dropped).filter(|(_, d)| !**d) {
        if cfg.endpoint_noise > 0.0 {
            let s = perturb_direction(a.start().as_vec(), cfg.endpoint_noise, &mut rng);
            let e = perturb_direction(a.end().as_vec(), cfg.endpoint_noise, &mut rng);
            if let Ok(n) = Arc2D::from_vecs(s, e) {
                arcs.push(n);
            }
        } else {
            arcs.push(*a);
        }
    }
    let n_out = (cfg.outlier_arcs * arcs.len() as f64).round() as usize;
    for _ in 0..n_out {
        arcs.push(random_arc(&mut rng));
    }

    let mut keypoints = Vec::new();
    for k in map.keypoints() {
        let w = pose.transform(&k.position);
        if w.norm() < crate::sphere::CENTER_EPS {
            continue;
        }
        let d = perturb_direction(&w.normalize(), cfg.keypoint_noise, &mut rng);
        keypoints.push(Keypoint2D {
            direction: UnitVector::new_unchecked(d),
            id: k.id,
        });
    }
    let n_kout = (cfg.keypoint_outliers * keypoints.len() as f64).round() as usize;
    for i in sample(&mut rng, keypoints.len(), n_kout).into_iter() {
        keypoints[i].direction = UnitVector::new_unchecked(random_direction(&mut rng));
    }
    Ok(QueryLines2D { arcs, keypoints })
}
