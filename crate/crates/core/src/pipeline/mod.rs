//! End-to-end localization: retrieval, per-candidate sparse patch
//! rendering, matching, lifting to 2D-3D correspondences, and robust
//! pose estimation, plus evaluation and reporting helpers.

pub mod ablation;
pub mod evaluate;
pub mod results;

use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use crate::egm::{retrieve, ExplicitGeometricMap};
use crate::features::{
    global_descriptor, match_descriptors, patch_descriptor, DetectorConfig, Keypoint,
    MatcherConfig, PatchDescriptor, ShiTomasi,
};
use crate::features::KeypointDetector;
use crate::geometry::Se3Pose;
use crate::ilm::{NerfModel, SamplingConfig};
use crate::img::Image;
use crate::pnp::{ransac_pnp, Correspondence2D3D, RansacConfig};
use crate::seeding;
use crate::sparse_render::{grid_origin, render_patches, PatchRequest, RenderStats};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no results to evaluate")]
    EmptyResults,
    #[error("query {0} has no ground-truth pose")]
    MissingGroundTruth(u32),
    #[error("bad results file: {0}")]
    BadResults(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a query could not be localized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    NoKeypoints,
    NoCandidates,
    InsufficientMatches,
    RansacFailed,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoKeypoints => "no-keypoints",
            Self::NoCandidates => "no-candidates",
            Self::InsufficientMatches => "insufficient-matches",
            Self::RansacFailed => "ransac-failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no-keypoints" => Some(Self::NoKeypoints),
            "no-candidates" => Some(Self::NoCandidates),
            "insufficient-matches" => Some(Self::InsufficientMatches),
            "ransac-failed" => Some(Self::RansacFailed),
            _ => None,
        }
    }
}

/// Wall time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub retrieval_ms: f64,
    pub render_ms: f64,
    pub describe_ms: f64,
    pub match_ms: f64,
    pub pnp_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub query_id: u32,
    /// Estimated pose; present exactly when `failure` is `None`.
    pub pose: Option<Se3Pose>,
    pub failure: Option<FailureReason>,
    pub inliers: usize,
    /// Correspondences available to the final pose attempt.
    pub correspondences: usize,
    /// Candidates processed before returning.
    pub candidates_used: usize,
    pub timings: StageTimings,
    pub ray_stats: RenderStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeConfig {
    /// Candidate reference images to consider, nearest first.
    pub top_k: usize,
    /// Patch side length (odd).
    pub patch_size: u32,
    pub detector: DetectorConfig,
    pub matcher: MatcherConfig,
    pub ransac: RansacConfig,
    /// Minimum pooled correspondences before attempting pose estimation.
    pub min_correspondences: usize,
    /// Stop consuming candidates once an estimate reaches this many inliers.
    pub early_exit_inliers: usize,
    /// Pool correspondences across candidates (the default); otherwise
    /// each candidate's matches are used alone.
    pub pooled: bool,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl LocalizeConfig {
    pub fn for_scale(scene_scale: f64, seed: u64) -> Self {
        Self {
            top_k: 20,
            patch_size: 15,
            detector: DetectorConfig::default(),
            matcher: MatcherConfig::default(),
            ransac: RansacConfig::default(),
            min_correspondences: 12,
            early_exit_inliers: 30,
            pooled: true,
            sampling: SamplingConfig::for_scale(scene_scale),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(format!("patch_size {} must be odd and >= 3", self.patch_size));
        }
        if self.min_correspondences < 4 {
            return Err("min_correspondences must be at least 4".into());
        }
        Ok(())
    }
}

fn failed(
    query_id: u32,
    reason: FailureReason,
    correspondences: usize,
    candidates_used: usize,
    timings: StageTimings,
    ray_stats: RenderStats,
) -> LocalizationResult {
    LocalizationResult {
        query_id,
        pose: None,
        failure: Some(reason),
        inliers: 0,
        correspondences,
        candidates_used,
        timings,
        ray_stats,
    }
}

/// Descriptors for patches cut from the query image around its keypoints.
/// Keypoints whose patch cannot be described are dropped (with their
/// keypoint), keeping descriptor and keypoint lists aligned.
fn describe_query_patches(
    image: &Image,
    keypoints: &[Keypoint],
    patch_size: u32,
) -> (Vec<Keypoint>, Vec<PatchDescriptor>) {
    let mut kept = Vec::with_capacity(keypoints.len());
    let mut descriptors = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let origin = grid_origin(kp.pixel, patch_size, image.width(), image.height());
        let Ok(pixels) = image.copy_patch(origin, patch_size) else {
            continue;
        };
        let Ok(desc) = patch_descriptor(&pixels, patch_size) else {
            continue;
        };
        kept.push(*kp);
        descriptors.push(desc);
    }
    (kept, descriptors)
}

/// Localizes one query image against the map. Never panics; failures
/// come back as structured reasons. The query is assumed to share the
/// reference camera's intrinsics.
pub fn localize(
    query_id: u32,
    image: &Image,
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    config: &LocalizeConfig,
) -> LocalizationResult {
    let mut timings = StageTimings::default();
    let mut ray_stats = RenderStats::default();

    // Query keypoints, global descriptor, and patch descriptors.
    let t0 = Instant::now();
    let detector = ShiTomasi(config.detector);
    let keypoints = detector.detect(image);
    let query_global = global_descriptor(image);
    timings.describe_ms += t0.elapsed().as_secs_f64() * 1e3;
    if keypoints.is_empty() {
        return failed(query_id, FailureReason::NoKeypoints, 0, 0, timings, ray_stats);
    }
    if config.patch_size > image.width().min(image.height()) {
        return failed(query_id, FailureReason::NoKeypoints, 0, 0, timings, ray_stats);
    }
    let t0 = Instant::now();
    let (query_kps, query_descs) = describe_query_patches(image, &keypoints, config.patch_size);
    timings.describe_ms += t0.elapsed().as_secs_f64() * 1e3;
    if query_kps.is_empty() {
        return failed(query_id, FailureReason::NoKeypoints, 0, 0, timings, ray_stats);
    }

    let t0 = Instant::now();
    let candidates = retrieve(map, &query_global, config.top_k);
    timings.retrieval_ms += t0.elapsed().as_secs_f64() * 1e3;
    if candidates.is_empty() {
        return failed(query_id, FailureReason::NoCandidates, 0, 0, timings, ray_stats);
    }

    // Correspondences pooled across candidates, deduplicated per
    // (query keypoint, map point) keeping the closer match.
    let mut pool: Vec<Correspondence2D3D> = Vec::new();
    let mut pool_dist: Vec<f32> = Vec::new();
    let mut pool_index: HashMap<(usize, u32), usize> = HashMap::new();
    let mut best: Option<(Se3Pose, usize, usize)> = None;
    let mut candidates_used = 0usize;
    let ransac_seed = seeding::mix(config.seed, &[seeding::tag("query-ransac"), u64::from(query_id)]);

    for (rank, &(ref_id, _)) in candidates.iter().enumerate() {
        candidates_used = rank + 1;
        let reference = &map.references[ref_id as usize];

        let requests: Vec<PatchRequest> = reference
            .keypoints
            .iter()
            .enumerate()
            .map(|(k, &(pixel, _))| PatchRequest {
                reference_id: ref_id,
                keypoint_index: k as u32,
                pixel,
                patch_size: config.patch_size,
            })
            .collect();
        if requests.is_empty() {
            continue;
        }
        let t0 = Instant::now();
        let Ok((patches, stats)) =
            render_patches(&requests, map, models, &config.sampling, config.seed)
        else {
            continue;
        };
        timings.render_ms += t0.elapsed().as_secs_f64() * 1e3;
        ray_stats.unique_rays += stats.unique_rays;
        ray_stats.total_patch_pixels += stats.total_patch_pixels;
        ray_stats.full_image_pixels += stats.full_image_pixels;
        ray_stats.n_patches += stats.n_patches;
        ray_stats.render_ms += stats.render_ms;

        let t0 = Instant::now();
        let mut ref_descs = Vec::with_capacity(patches.len());
        let mut ref_points = Vec::with_capacity(patches.len());
        for patch in &patches {
            let Ok(desc) = patch_descriptor(&patch.pixels, config.patch_size) else {
                continue;
            };
            let kp_index = patch.request.keypoint_index as usize;
            ref_descs.push(desc);
            ref_points.push(reference.keypoints[kp_index].1);
        }
        timings.describe_ms += t0.elapsed().as_secs_f64() * 1e3;

        let t0 = Instant::now();
        let matches = match_descriptors(
            &query_descs,
            &ref_descs,
            config.matcher.ratio,
            config.matcher.max_distance,
        );
        timings.match_ms += t0.elapsed().as_secs_f64() * 1e3;

        if !config.pooled {
            pool.clear();
            pool_dist.clear();
            pool_index.clear();
        }
        for &(qi, ri, dist) in &matches.pairs {
            let point_id = ref_points[ri];
            let corr = Correspondence2D3D {
                point2d: query_kps[qi].pixel,
                point3d: map.points[point_id as usize].position,
            };
            match pool_index.get(&(qi, point_id)) {
                Some(&slot) => {
                    if dist < pool_dist[slot] {
                        pool[slot] = corr;
                        pool_dist[slot] = dist;
                    }
                }
                None => {
                    pool_index.insert((qi, point_id), pool.len());
                    pool.push(corr);
                    pool_dist.push(dist);
                }
            }
        }

        if pool.len() < config.min_correspondences {
            continue;
        }
        let t0 = Instant::now();
        let attempt = ransac_pnp(&pool, &reference.intrinsics, &config.ransac, ransac_seed);
        timings.pnp_ms += t0.elapsed().as_secs_f64() * 1e3;
        if let Ok(estimate) = attempt {
            let n_inliers = estimate.inliers.len();
            if best.as_ref().is_none_or(|&(_, b, _)| n_inliers > b) {
                best = Some((estimate.pose, n_inliers, pool.len()));
            }
            if n_inliers >= config.early_exit_inliers {
                break;
            }
        }
    }

    match best {
        Some((pose, inliers, correspondences)) => LocalizationResult {
            query_id,
            pose: Some(pose),
            failure: None,
            inliers,
            correspondences,
            candidates_used,
            timings,
            ray_stats,
        },
        None => {
            let reason = if pool.len() < config.min_correspondences {
                FailureReason::InsufficientMatches
            } else {
                FailureReason::RansacFailed
            };
            failed(
                query_id,
                reason,
                pool.len(),
                candidates_used,
                timings,
                ray_stats,
            )
        }
    }
}

/// Convenience for tests and the ablation harness: localize a batch of
/// queries sequentially.
pub fn localize_all(
    queries: &[(u32, Image)],
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    config: &LocalizeConfig,
) -> Vec<LocalizationResult> {
    queries
        .iter()
        .map(|(id, image)| localize(*id, image, map, models, config))
        .collect()
}

pub use ablation::{format_ablation_table, run_patch_ablation, AblationRow};
pub use evaluate::{evaluate, standard_thresholds, EvaluationReport, QueryOutcome, ThresholdSpec};
pub use results::{parse_results, results_to_string, write_results};
