//! End-to-end localization: filtering, principal directions, rotation
//! hypotheses, pose ranking, and keypoint-based refinement.

use serde::{Deserialize, Serialize};

use crate::chamfer::chamfer_rank;
use crate::directions::{directions_3d, vanishing_points_2d, PrincipalDirections2D, PrincipalDirections3D, DEFAULT_GRID_LEVEL, DEFAULT_K_2D, DEFAULT_K_3D};
use crate::error::{Error, Result};
use crate::lines::{filter_lines_2d, filter_lines_3d, LineMap3D, QueryLines2D, DEFAULT_FILTER_LAMBDA};
use crate::refine::{refine_pose, Matcher, RansacConfig};
use crate::rotations::{enumerate_rotations, RotationConfig, RotationHypothesis};
use crate::search::{rank_poses, translation_pool, RankedPose, SearchConfig};
use crate::sphere::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranker {
    Ldf,
    Chamfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Length-filter ratio for map segments; the query is filtered at the
    /// same removal rate.
    pub filter_lambda: f64,
    pub k_2d: usize,
    pub k_3d: usize,
    pub grid_level: u32,
    pub ranker: Ranker,
    pub refine: bool,
    /// Gating window of the keypoint matcher, radians.
    pub match_window: f64,
    pub rotation: RotationConfig,
    pub search: SearchConfig,
    pub ransac: RansacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter_lambda: DEFAULT_FILTER_LAMBDA,
            k_2d: DEFAULT_K_2D,
            k_3d: DEFAULT_K_3D,
            grid_level: DEFAULT_GRID_LEVEL,
            ranker: Ranker::Ldf,
            refine: true,
            match_window: 0.35,
            rotation: RotationConfig::default(),
            search: SearchConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

/// Intermediate products shared by the ranking stage.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub query: QueryLines2D,
    pub map: LineMap3D,
    pub directions_2d: PrincipalDirections2D,
    pub directions_3d: PrincipalDirections3D,
    pub rotations: Vec<RotationHypothesis>,
    pub translations: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedCandidate {
    /// Index into the ranked candidate list.
    pub candidate_index: usize,
    pub matches: usize,
    pub inliers: usize,
    pub pose: Pose,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub candidates: Vec<RankedPose>,
    pub refined: Option<RefinedCandidate>,
}

impl Localization {
    /// The refined pose if refinement ran and reached consensus, otherwise
    /// the best-ranked candidate.
    pub fn best_pose(&self) -> &Pose {
        match &self.refined {
            Some(r) => &r.pose,
            None => &self.candidates[0].pose,
        }
    }
}

/// Runs every stage up to, but not including, ranking. `extra_translations`
/// are appended to the grid pool.
pub fn prepare(query: &QueryLines2D, map: &LineMap3D, cfg: &PipelineConfig, extra_translations: &[Vec3]) -> Result<Candidates> {
    if query.arcs.is_empty() {
        return Err(Error::NoCandidates("query has no line segments"));
    }
    let (map_f, removed) = filter_lines_3d(map, cfg.filter_lambda)?;
    let query_f = filter_lines_2d(query, removed)?;
    let directions_2d = vanishing_points_2d(&query_f, cfg.k_2d, cfg.grid_level)?;
    let directions_3d = directions_3d(&map_f, cfg.k_3d, cfg.grid_level)?;
    let rotations = enumerate_rotations(&directions_2d, &directions_3d, &cfg.rotation)?.hypotheses;
    let mut translations = translation_pool(&map_f, cfg.search.n_translations, cfg.search.margin)?;
    translations.extend_from_slice(extra_translations);
    Ok(Candidates {
        query: query_f,
        map: map_f,
        directions_2d,
        directions_3d,
        rotations,
        translations,
    })
}

/// Ranks the prepared candidates with the configured ranker.
pub fn rank(c: &Candidates, cfg: &PipelineConfig) -> Result<Vec<RankedPose>> {
    match cfg.ranker {
        Ranker::Ldf => rank_poses(&c.query, &c.map, &c.rotations, &c.translations, &cfg.search),
        Ranker::Chamfer => chamfer_rank(&c.query, &c.map, &c.rotations, &c.translations, cfg.search.top_k),
    }
}

/// Matches keypoints for every candidate, keeps the one with the most
/// matches (earlier rank on ties) and refines it.
pub fn refine_best(
    candidates: &[RankedPose],
    query: &QueryLines2D,
    map: &LineMap3D,
    matcher: &dyn Matcher,
    cfg: &RansacConfig,
) -> Result<Option<RefinedCandidate>> {
    let mut best: Option<(usize, Vec<_>)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let m = matcher.matches(map, &query.keypoints, &c.pose);
        if best.as_ref().map_or(true, |(_, b)| m.len() > b.len()) {
            best = Some((i, m));
        }
    }
    let Some((index, matches)) = best else { return Ok(None) };
    if matches.len() < 3 {
        return Ok(None);
    }
    let r = refine_pose(&candidates[index].pose, &matches, cfg)?;
    if !r.has_consensus() {
        return Ok(None);
    }
    Ok(Some(RefinedCandidate {
        candidate_index: index,
        matches: matches.len(),
        inliers: r.inlier_count(),
        pose: r.pose,
        mean_error: r.mean_error,
    }))
}

/// Full localization of `query` against `map`. Refinement runs when it is
/// enabled and a matcher is supplied.
pub fn localize(
    query: &QueryLines2D,
    map: &LineMap3D,
    cfg: &PipelineConfig,
    matcher: Option<&dyn Matcher>,
    extra_translations: &[Vec3],
) -> Result<Localization> {
    cfg.search.validate()?;
    let prepared = prepare(query, map, cfg, extra_translations)?;
    let candidates = rank(&prepared, cfg)?;
    let refined = match matcher {
        Some(m) if cfg.refine => refine_best(&candidates, query, map, m, &cfg.ransac)?,
        _ => None,
    };
    Ok(Localization { candidates, refined })
}
