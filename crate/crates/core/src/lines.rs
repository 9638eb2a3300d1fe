//! Line-set containers and length-based filtering.

use crate::error::{Error, Result};
use crate::sphere::{Arc2D, Segment3D, UnitVector, Vec3};

/// Default length-filter ratio against the mean bounding-box extent.
pub const DEFAULT_FILTER_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint3D {
    pub position: Vec3,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub direction: UnitVector,
    pub id: u64,
}

/// A metric 3D line map with its bounding box and optional keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LineMap3D {
    segments: Vec<Segment3D>,
    bbox_min: Vec3,
    bbox_max: Vec3,
    keypoints: Vec<Keypoint3D>,
}

impl LineMap3D {
    pub fn new(segments: Vec<Segment3D>, bbox_min: Vec3, bbox_max: Vec3, keypoints: Vec<Keypoint3D>) -> Result<Self> {
        let ext = bbox_max - bbox_min;
        if !ext.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidBoundingBox(format!(
                "extents must be positive, got [{}, {}, {}]",
                ext.x, ext.y, ext.z
            )));
        }
        let inside = |p: &Vec3| (0..3).all(|k| p[k] >= bbox_min[k] && p[k] <= bbox_max[k]);
        if let Some(i) = segments.iter().position(|s| !inside(s.start()) || !inside(s.end())) {
            return Err(Error::InvalidBoundingBox(format!("segment {i} leaves the bounding box")));
        }
        Ok(LineMap3D {
            segments,
            bbox_min,
            bbox_max,
            keypoints,
        })
    }

    /// Builds a map whose bounding box is the tight box around the segments;
    /// axes with zero spread are padded by half a meter on each side.
    pub fn from_segments(segments: Vec<Segment3D>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidBoundingBox("no segments".into()));
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in &segments {
            lo = lo.inf(s.start()).inf(s.end());
            hi = hi.sup(s.start()).sup(s.end());
        }
        for k in 0..3 {
            if hi[k] - lo[k] <= 0.0 {
                lo[k] -= 0.5;
                hi[k] += 0.5;
            }
        }
        LineMap3D::new(segments, lo, hi, Vec::new())
    }

    pub fn segments(&self) -> &[Segment3D] {
        &self.segments
    }

    pub fn bbox_min(&self) -> &Vec3 {
        &self.bbox_min
    }

    pub fn bbox_max(&self) -> &Vec3 {
        &self.bbox_max
    }

    pub fn extents(&self) -> Vec3 {
        self.bbox_max - self.bbox_min
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.extents().norm()
    }

    pub fn keypoints(&self) -> &[Keypoint3D] {
        &self.keypoints
    }

    pub fn with_keypoints(mut self, keypoints: Vec<Keypoint3D>) -> Self {
        self.keypoints = keypoints;
        self
    }

    pub(crate) fn with_segments(&self, segments: Vec<Segment3D>) -> Self {
        LineMap3D {
            segments,
            bbox_min: self.bbox_min,
            bbox_max: self.bbox_max,
            keypoints: self.keypoints.clone(),
        }
    }
}

/// Line segments and keypoints observed in a query panorama.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryLines2D {
    pub arcs: Vec<Arc2D>,
    pub keypoints: Vec<Keypoint2D>,
}

impl QueryLines2D {
    pub fn new(arcs: Vec<Arc2D>) -> Self {
        QueryLines2D {
            arcs,
            keypoints: Vec::new(),
        }
    }
}

/// Removes segments shorter than `lambda * (b_x + b_y + b_z) / 3` and returns
/// the filtered map with the fraction removed.
pub fn filter_lines_3d(map: &LineMap3D, lambda: f64) -> Result<(LineMap3D, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let ext = map.extents();
    let threshold = lambda * (ext.x + ext.y + ext.z) / 3.0;
    let kept: Vec<Segment3D> = map
        .segments()
        .iter()
        .filter(|s| s.length() >= threshold)
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let total = map.segments().len();
    let removed = (total - kept.len()) as f64 / total as f64;
    Ok((map.with_segments(kept), removed))
}

/// Drops the `floor(fraction * N)` arcs with the smallest subtended angle.
/// Equal angles are removed in input order; survivors keep their order.
pub fn filter_lines_2d(query: &QueryLines2D, target_removed_fraction: f64) -> Result<QueryLines2D> {
    if !(0.0..1.0).contains(&target_removed_fraction) {
        return Err(Error::InvalidArgument(format!(
            "removed fraction must lie in [0, 1), got {target_removed_fraction}"
        )));
    }
    let n = query.arcs.len();
    let n_remove = (target_removed_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps input order among equal angles
    order.sort_by(|&a, &b| query.arcs[a].angle().total_cmp(&query.arcs[b].angle()));
    let mut removed = vec![false; n];
    for &i in &order[..n_remove] {
        removed[i] = true;
    }
    let arcs = query
        .arcs
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(a, _)| *a)
        .collect();
    Ok(QueryLines2D {
        arcs,
        keypoints: query.keypoints.clone(),
    })
}
