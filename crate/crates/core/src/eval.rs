//! Pose error metrics and threshold accuracy.

use crate::error::{Error, Result};
use crate::sphere::{rotation_angle, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Distance between camera centers, meters.
    pub translation: f64,
    /// Relative rotation angle, degrees.
    pub rotation_deg: f64,
}

pub fn pose_error(pred: &Pose, gt: &Pose) -> PoseError {
    PoseError {
        translation: (pred.center() - gt.center()).norm(),
        rotation_deg: rotation_angle(pred.rotation(), gt.rotation()),
    }
}

/// A pose counts as correct when both errors are strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub meters: f64,
    pub degrees: f64,
}

impl Threshold {
    pub fn accepts(&self, e: &PoseError) -> bool {
        e.translation < self.meters && e.rotation_deg < self.degrees
    }
}

/// Parses `"0.1m,5deg;0.05m,10deg"`.
pub fn parse_thresholds(s: &str) -> Result<Vec<Threshold>> {
    let bad = |part: &str| Error::InvalidArgument(format!("threshold `{part}` is not of the form <x>m,<y>deg"));
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|part| {
            let (m, d) = part.split_once(',').ok_or_else(|| bad(part))?;
            let meters: f64 = m.trim().strip_suffix('m').ok_or_else(|| bad(part))?.parse().map_err(|_| bad(part))?;
            let degrees: f64 = d.trim().strip_suffix("deg").ok_or_else(|| bad(part))?.parse().map_err(|_| bad(part))?;
            if !(meters > 0.0 && degrees > 0.0) {
                return Err(bad(part));
            }
            Ok(Threshold { meters, degrees })
        })
        .collect()
}

pub const DEFAULT_THRESHOLDS: &str = "0.1m,5deg;0.05m,10deg;0.25m,2deg;0.5m,5deg;1m,10deg";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub median_translation: f64,
    pub median_rotation_deg: f64,
    /// Fraction of poses accepted by each threshold, in input order.
    pub accuracy: Vec<(Threshold, f64)>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(errors: &[PoseError], thresholds: &[Threshold]) -> EvalSummary {
    let t: Vec<f64> = errors.iter().map(|e| e.translation).collect();
    let r: Vec<f64> = errors.iter().map(|e| e.rotation_deg).collect();
    let accuracy = thresholds
        .iter()
        .map(|th| {
            let hits = errors.iter().filter(|e| th.accepts(e)).count();
            (*th, hits as f64 / errors.len().max(1) as f64)
        })
        .collect();
    EvalSummary {
        count: errors.len(),
        median_translation: median(&t),
        median_rotation_deg: median(&r),
        accuracy,
    }
}
