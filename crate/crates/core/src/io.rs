//! Reading and writing maps, queries, poses, configs and results.
//!
//! Every file is a JSON object tagged with `"format": "ldl/1"` and a `kind`.
//! Reals are written in their shortest round-tripping decimal form, so
//! `read(write(x))` reproduces every value bit for bit. Unit vectors,
//! rotations and bounding boxes are re-validated on read.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lines::{Keypoint2D, Keypoint3D, LineMap3D, QueryLines2D};
use crate::pipeline::{Localization, PipelineConfig, RefinedCandidate};
use crate::search::{RankedPose, SearchConfig};
use crate::sim::SimConfig;
use crate::sphere::{check_rotation, Arc2D, Mat3, Pose, Segment3D, UnitVector, Vec3};

pub const FORMAT: &str = "ldl/1";

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Map,
    Query,
    Pose,
    Results,
    SimConfig,
    SearchConfig,
    Config,
}

impl Kind {
    fn tag(&self) -> &'static str {
        match self {
            Kind::Map => "map",
            Kind::Query => "query",
            Kind::Pose => "pose",
            Kind::Results => "results",
            Kind::SimConfig => "sim_config",
            Kind::SearchConfig => "search_config",
            Kind::Config => "config",
        }
    }
}

trait Document: Serialize + DeserializeOwned {
    fn header(&self) -> (&str, &str);
}

macro_rules! document {
    ($t:ident) => {
        impl Document for $t {
            fn header(&self) -> (&str, &str) {
                (&self.format, &self.kind)
            }
        }
    };
}

fn header(kind: Kind) -> (String, String) {
    (FORMAT.to_string(), kind.tag().to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentDoc {
    s: [f64; 3],
    e: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Keypoint3Doc {
    p: [f64; 3],
    id: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    format: String,
    kind: String,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    segments: Vec<SegmentDoc>,
    #[serde(default)]
    keypoints: Vec<Keypoint3Doc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Keypoint2Doc {
    d: [f64; 3],
    id: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    format: String,
    kind: String,
    arcs: Vec<SegmentDoc>,
    #[serde(default)]
    keypoints: Vec<Keypoint2Doc>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct PoseDoc {
    format: String,
    kind: String,
    R: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct CandidateDoc {
    R: [f64; 9],
    t: [f64; 3],
    inliers: usize,
    residual: f64,
    loss: f64,
    rotation_index: usize,
    translation_index: usize,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
struct RefinedDoc {
    R: [f64; 9],
    t: [f64; 3],
    candidate_index: usize,
    matches: usize,
    inliers: usize,
    mean_error: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultsDoc {
    format: String,
    kind: String,
    config: PipelineConfig,
    refined: Option<RefinedDoc>,
    candidates: Vec<CandidateDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc<T> {
    format: String,
    kind: String,
    config: T,
}

impl<T: Serialize + DeserializeOwned> Document for ConfigDoc<T> {
    fn header(&self) -> (&str, &str) {
        (&self.format, &self.kind)
    }
}

document!(MapDoc);
document!(QueryDoc);
document!(PoseDoc);
document!(ResultsDoc);

/// Localization output together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Results {
    pub config: PipelineConfig,
    pub localization: Localization,
}

fn parse_error(line: usize, field: String, message: String) -> Error {
    Error::Parse { line, field, message }
}

fn invariant(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvariantViolation {
        field: field.into(),
        message: message.into(),
    }
}

fn decode<T: Document>(text: &str, kind: Kind) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // serde reports missing fields against the enclosing object
        let field = match message.split('`').nth(1) {
            Some(name) if message.starts_with("missing field") => {
                if path == "." {
                    name.to_string()
                } else {
                    format!("{path}.{name}")
                }
            }
            _ => path,
        };
        parse_error(inner.line(), field, message)
    })?;
    let (format, found) = doc.header();
    if format != FORMAT {
        return Err(parse_error(0, "format".into(), format!("expected `{FORMAT}`, got `{format}`")));
    }
    if found != kind.tag() {
        return Err(parse_error(0, "kind".into(), format!("expected `{}`, got `{found}`", kind.tag())));
    }
    Ok(doc)
}

fn encode<T: Document>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents always serialize");
    s.push('\n');
    s
}

fn unit(v: [f64; 3], field: String) -> Result<UnitVector> {
    let v = Vec3::from(v);
    if !v.iter().all(|x| x.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOL {
        return Err(invariant(field, format!("expected a unit vector, norm is {}", v.norm())));
    }
    Ok(UnitVector::new_unchecked(v))
}

fn finite3(v: [f64; 3], field: String) -> Result<Vec3> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vec3::from(v))
    } else {
        Err(invariant(field, "non-finite value"))
    }
}

fn rot_from(r: [f64; 9]) -> Mat3 {
    Mat3::from_row_slice(&r)
}

fn rot_to(r: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = r[(i, j)];
        }
    }
    out
}

fn pose_from(r: [f64; 9], t: [f64; 3], prefix: &str) -> Result<Pose> {
    let rot = rot_from(r);
    check_rotation(&rot).map_err(|e| invariant(format!("{prefix}R"), e.to_string()))?;
    let t = finite3(t, format!("{prefix}t"))?;
    Pose::new(rot, t).map_err(|e| invariant(format!("{prefix}R"), e.to_string()))
}

fn v3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn map_to_string(map: &LineMap3D) -> String {
    let (format, kind) = header(Kind::Map);
    let doc = MapDoc {
        format,
        kind,
        bbox_min: v3(map.bbox_min()),
        bbox_max: v3(map.bbox_max()),
        segments: map
            .segments()
            .iter()
            .map(|s| SegmentDoc {
                s: v3(s.start()),
                e: v3(s.end()),
            })
            .collect(),
        keypoints: map
            .keypoints()
            .iter()
            .map(|k| Keypoint3Doc {
                p: v3(&k.position),
                id: k.id,
            })
            .collect(),
    };
    encode(&doc)
}

pub fn map_from_str(text: &str) -> Result<LineMap3D> {
    let doc: MapDoc = decode(text, Kind::Map)?;
    let mut segments = Vec::with_capacity(doc.segments.len());
    for (i, s) in doc.segments.into_iter().enumerate() {
        let a = finite3(s.s, format!("segments[{i}].s"))?;
        let b = finite3(s.e, format!("segments[{i}].e"))?;
        segments.push(Segment3D::new(a, b).map_err(|e| invariant(format!("segments[{i}]"), e.to_string()))?);
    }
    let keypoints = doc
        .keypoints
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            Ok(Keypoint3D {
                position: finite3(k.p, format!("keypoints[{i}].p"))?,
                id: k.id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = finite3(doc.bbox_min, "bbox_min".into())?;
    let hi = finite3(doc.bbox_max, "bbox_max".into())?;
    LineMap3D::new(segments, lo, hi, keypoints).map_err(|e| invariant("bbox", e.to_string()))
}

pub fn query_to_string(q: &QueryLines2D) -> String {
    let (format, kind) = header(Kind::Query);
    let doc = QueryDoc {
        format,
        kind,
        arcs: q
            .arcs
            .iter()
            .map(|a| SegmentDoc {
                s: v3(a.start().as_vec()),
                e: v3(a.end().as_vec()),
            })
            .collect(),
        keypoints: q
            .keypoints
            .iter()
            .map(|k| Keypoint2Doc {
                d: v3(k.direction.as_vec()),
                id: k.id,
            })
            .collect(),
    };
    encode(&doc)
}

pub fn query_from_str(text: &str) -> Result<QueryLines2D> {
    let doc: QueryDoc = decode(text, Kind::Query)?;
    let mut arcs = Vec::with_capacity(doc.arcs.len());
    for (i, a) in doc.arcs.into_iter().enumerate() {
        let s = unit(a.s, format!("arcs[{i}].s"))?;
        let e = unit(a.e, format!("arcs[{i}].e"))?;
        arcs.push(Arc2D::new(s, e).map_err(|err| invariant(format!("arcs[{i}]"), err.to_string()))?);
    }
    let keypoints = doc
        .keypoints
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            Ok(Keypoint2D {
                direction: unit(k.d, format!("keypoints[{i}].d"))?,
                id: k.id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryLines2D { arcs, keypoints })
}

pub fn pose_to_string(p: &Pose) -> String {
    let (format, kind) = header(Kind::Pose);
    encode(&PoseDoc {
        format,
        kind,
        R: rot_to(p.rotation()),
        t: v3(p.translation()),
    })
}

pub fn pose_from_str(text: &str) -> Result<Pose> {
    let doc: PoseDoc = decode(text, Kind::Pose)?;
    pose_from(doc.R, doc.t, "")
}

pub fn results_to_string(r: &Results) -> String {
    let (format, kind) = header(Kind::Results);
    let doc = ResultsDoc {
        format,
        kind,
        config: r.config,
        refined: r.localization.refined.as_ref().map(|x| RefinedDoc {
            R: rot_to(x.pose.rotation()),
            t: v3(x.pose.translation()),
            candidate_index: x.candidate_index,
            matches: x.matches,
            inliers: x.inliers,
            mean_error: x.mean_error,
        }),
        candidates: r
            .localization
            .candidates
            .iter()
            .map(|c| CandidateDoc {
                R: rot_to(c.pose.rotation()),
                t: v3(c.pose.translation()),
                inliers: c.inliers,
                residual: c.residual,
                loss: c.loss,
                rotation_index: c.rotation_index,
                translation_index: c.translation_index,
            })
            .collect(),
    };
    encode(&doc)
}

pub fn results_from_str(text: &str) -> Result<Results> {
    let doc: ResultsDoc = decode(text, Kind::Results)?;
    let candidates = doc
        .candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(RankedPose {
                pose: pose_from(c.R, c.t, &format!("candidates[{i}]."))?,
                inliers: c.inliers,
                residual: c.residual,
                loss: c.loss,
                rotation_index: c.rotation_index,
                translation_index: c.translation_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refined = match doc.refined {
        Some(x) => Some(RefinedCandidate {
            pose: pose_from(x.R, x.t, "refined.")?,
            candidate_index: x.candidate_index,
            matches: x.matches,
            inliers: x.inliers,
            mean_error: x.mean_error,
        }),
        None => None,
    };
    if refined.is_none() && candidates.is_empty() {
        return Err(invariant("candidates", "results contain no pose"));
    }
    Ok(Results {
        config: doc.config,
        localization: Localization { candidates, refined },
    })
}

pub fn sim_config_to_string(c: &SimConfig) -> String {
    let (format, kind) = header(Kind::SimConfig);
    encode(&ConfigDoc { format, kind, config: *c })
}

pub fn sim_config_from_str(text: &str) -> Result<SimConfig> {
    let c = decode::<ConfigDoc<SimConfig>>(text, Kind::SimConfig)?.config;
    c.validate().map_err(|e| invariant("config", e.to_string()))?;
    Ok(c)
}

pub fn search_config_to_string(c: &SearchConfig) -> String {
    let (format, kind) = header(Kind::SearchConfig);
    encode(&ConfigDoc { format, kind, config: *c })
}

pub fn search_config_from_str(text: &str) -> Result<SearchConfig> {
    let c = decode::<ConfigDoc<SearchConfig>>(text, Kind::SearchConfig)?.config;
    c.validate().map_err(|e| invariant("config", e.to_string()))?;
    Ok(c)
}

pub fn pipeline_config_to_string(c: &PipelineConfig) -> String {
    let (format, kind) = header(Kind::Config);
    encode(&ConfigDoc { format, kind, config: *c })
}

/// Reads a pipeline config; missing fields take their default values.
pub fn pipeline_config_from_str(text: &str) -> Result<PipelineConfig> {
    let c = decode::<ConfigDoc<PipelineConfig>>(text, Kind::Config)?.config;
    c.search.validate().map_err(|e| invariant("config.search", e.to_string()))?;
    Ok(c)
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
