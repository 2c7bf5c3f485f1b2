//! Explicit geometric map: sparse 3D points, per-reference keypoints, and
//! global descriptors for retrieval.
//!
//! The map deliberately stores no local (per-keypoint) descriptors; at
//! query time local appearance is re-rendered on demand from the implicit
//! per-cluster models. Keypoint pixels are continuous center coordinates
//! (see [`crate::features`]).
//!
//! Identifiers are dense: `points[i].id == i` and `references[i].id == i`.

mod io;

pub use io::{
    load_map, map_size_report, save_map, save_map_to_vec, save_map_with_local_descriptors,
    MapSizeReport,
};

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::division::{self, DivisionError};
use crate::features::{GlobalDescriptor, KeypointDetector, GLOBAL_DESCRIPTOR_DIM};
use crate::geometry::{pixel_to_ray, CameraIntrinsics, GeometryError, Se3Pose};
use crate::img::{DepthMap, Image};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("need at least 2 reference views, got {0}")]
    TooFewReferences(usize),
    #[error("no 3D point was observed from at least two views")]
    NoSurvivingPoints,
    #[error("view {index} has mismatched image/depth/pose dimensions: {reason}")]
    BadView { index: usize, reason: String },
    #[error(transparent)]
    Division(#[from] DivisionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a map file)")]
    BadMagic,
    #[error("unsupported map format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {expected} more bytes, {found} available")]
    Truncated { expected: u64, found: u64 },
    #[error("corrupt map file: {0}")]
    Corrupt(String),
    #[error("map integrity violated: {0}")]
    Integrity(String),
}

/// A triangulated scene point with the observations that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint3D {
    pub id: u32,
    pub position: Vector3<f64>,
    /// Observations as (reference id, keypoint index in that reference).
    pub track: Vec<(u32, u32)>,
}

/// One reference view: pose, intrinsics, surviving keypoints, and the
/// global descriptor used for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub id: u32,
    pub pose: Se3Pose,
    pub intrinsics: CameraIntrinsics,
    /// (pixel center coordinates, map point id).
    pub keypoints: Vec<(Vector2<f64>, u32)>,
    pub global_descriptor: Vec<f32>,
    pub cluster_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitGeometricMap {
    pub points: Vec<MapPoint3D>,
    pub references: Vec<ReferenceEntry>,
    pub cluster_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_clusters: usize,
    /// 3D observations closer than this merge into one map point.
    pub merge_radius: f64,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl BuildConfig {
    /// Defaults for a scene of the given spatial scale: merge radius of
    /// 1% of the scale (about one pixel of depth-induced spread at the
    /// working distances this pipeline targets).
    pub fn for_scale(scene_scale: f64, n_clusters: usize, seed: u64) -> Self {
        Self {
            n_clusters,
            merge_radius: 0.01 * scene_scale,
            kmeans_max_iters: 100,
            seed,
        }
    }
}

/// An observation during map building, before merging.
struct Observation {
    reference: u32,
    pixel: Vector2<f64>,
    position: Vector3<f64>,
}

/// A merged point accumulating its member observations.
struct Cluster3D {
    sum: Vector3<f64>,
    members: Vec<usize>,
}

impl Cluster3D {
    fn mean(&self) -> Vector3<f64> {
        self.sum / self.members.len() as f64
    }
}

/// Builds the explicit map from rendered reference views.
///
/// Per view: detect keypoints, back-project those with finite depth
/// (background keypoints are discarded), then merge 3D observations within
/// `merge_radius` into single map points (position = mean of members).
/// Points observed from fewer than two views are dropped, along with their
/// keypoints. Finally the cameras are clustered for model assignment.
pub fn build_map(
    views: &[(Image, DepthMap)],
    poses: &[Se3Pose],
    intrinsics: &CameraIntrinsics,
    detector: &dyn KeypointDetector,
    global: &dyn GlobalDescriptor,
    config: &BuildConfig,
) -> Result<ExplicitGeometricMap, MapError> {
    if views.len() < 2 {
        return Err(MapError::TooFewReferences(views.len()));
    }
    if views.len() != poses.len() {
        return Err(MapError::BadView {
            index: 0,
            reason: format!("{} views but {} poses", views.len(), poses.len()),
        });
    }
    for (i, (image, depth)) in views.iter().enumerate() {
        if image.width() != intrinsics.width
            || image.height() != intrinsics.height
            || depth.width() != intrinsics.width
            || depth.height() != intrinsics.height
        {
            return Err(MapError::BadView {
                index: i,
                reason: format!(
                    "image {}x{}, depth {}x{}, intrinsics {}x{}",
                    image.width(),
                    image.height(),
                    depth.width(),
                    depth.height(),
                    intrinsics.width,
                    intrinsics.height
                ),
            });
        }
    }

    // Detect and back-project. Observations are gathered in (reference,
    // keypoint) order, which fixes every later tie-break.
    let mut observations: Vec<Observation> = Vec::new();
    let mut descriptors: Vec<Vec<f32>> = Vec::with_capacity(views.len());
    for (ref_idx, ((image, depth), pose)) in views.iter().zip(poses).enumerate() {
        let keypoints = detector.detect(image);
        for kp in keypoints {
            let px = kp.pixel.x.floor() as i64;
            let py = kp.pixel.y.floor() as i64;
            if px < 0 || py < 0 || px >= i64::from(depth.width()) || py >= i64::from(depth.height())
            {
                continue;
            }
            let z = depth.get(px as u32, py as u32);
            if !z.is_finite() {
                continue;
            }
            // pixel_to_ray expects index coordinates; keypoints are centers.
            let ray = pixel_to_ray(
                Vector2::new(kp.pixel.x - 0.5, kp.pixel.y - 0.5),
                intrinsics,
                pose,
                (0.01, 2.0),
            )?;
            let dir_cam_z = (pose.rotation * ray.direction).z;
            if dir_cam_z <= 1e-12 {
                continue;
            }
            let t = f64::from(z) / dir_cam_z;
            observations.push(Observation {
                reference: ref_idx as u32,
                pixel: kp.pixel,
                position: ray.origin + t * ray.direction,
            });
        }
        descriptors.push(global.describe(image));
    }

    // Greedy radial merge on a uniform grid. Cells are merge_radius wide;
    // only the 27 neighboring cells can hold a compatible point.
    let eps = config.merge_radius.max(1e-12);
    let mut clusters: Vec<Cluster3D> = Vec::new();
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let cell_of = |p: &Vector3<f64>| {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    };
    for (obs_idx, obs) in observations.iter().enumerate() {
        let (cx, cy, cz) = cell_of(&obs.position);
        let mut joined: Option<usize> = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &ci in bucket {
                        if (clusters[ci].mean() - obs.position).norm() < eps {
                            joined = Some(ci);
                            break 'search;
                        }
                    }
                }
            }
        }
        match joined {
            Some(ci) => {
                clusters[ci].sum += obs.position;
                clusters[ci].members.push(obs_idx);
            }
            None => {
                let ci = clusters.len();
                clusters.push(Cluster3D {
                    sum: obs.position,
                    members: vec![obs_idx],
                });
                grid.entry((cx, cy, cz)).or_default().push(ci);
            }
        }
    }

    // Keep points seen from >= 2 distinct references.
    let survivors: Vec<&Cluster3D> = clusters
        .iter()
        .filter(|c| {
            let mut refs: Vec<u32> = c.members.iter().map(|&m| observations[m].reference).collect();
            refs.sort_unstable();
            refs.dedup();
            refs.len() >= 2
        })
        .collect();
    if survivors.is_empty() {
        return Err(MapError::NoSurvivingPoints);
    }

    // Renumber: surviving observations get fresh per-reference keypoint
    // indices in original detection order.
    let mut point_of_obs: HashMap<usize, u32> = HashMap::new();
    for (pid, cluster) in survivors.iter().enumerate() {
        for &m in &cluster.members {
            point_of_obs.insert(m, pid as u32);
        }
    }
    let mut references: Vec<ReferenceEntry> = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| ReferenceEntry {
            id: i as u32,
            pose: *pose,
            intrinsics: *intrinsics,
            keypoints: Vec::new(),
            global_descriptor: descriptors[i].clone(),
            cluster_id: 0,
        })
        .collect();
    let mut new_kp_index: HashMap<usize, u32> = HashMap::new();
    for (obs_idx, obs) in observations.iter().enumerate() {
        if let Some(&pid) = point_of_obs.get(&obs_idx) {
            let entry = &mut references[obs.reference as usize];
            new_kp_index.insert(obs_idx, entry.keypoints.len() as u32);
            entry.keypoints.push((obs.pixel, pid));
        }
    }
    let points: Vec<MapPoint3D> = survivors
        .iter()
        .enumerate()
        .map(|(pid, cluster)| MapPoint3D {
            id: pid as u32,
            position: cluster.mean(),
            track: cluster
                .members
                .iter()
                .map(|&m| (observations[m].reference, new_kp_index[&m]))
                .collect(),
        })
        .collect();

    // Cluster the cameras for model assignment.
    let division_seed = crate::seeding::mix(config.seed, &[crate::seeding::tag("clusters")]);
    let clustering =
        division::kmeans_poses(poses, config.n_clusters, division_seed, config.kmeans_max_iters)?;
    for (entry, &k) in references.iter_mut().zip(&clustering.assignments) {
        entry.cluster_id = k as u32;
    }

    let map = ExplicitGeometricMap {
        points,
        references,
        cluster_count: config.n_clusters as u32,
    };
    verify_integrity(&map)?;
    Ok(map)
}

/// Ranks references by Euclidean distance between unit-norm global
/// descriptors, ascending; ties break toward the smaller reference id.
pub fn retrieve(map: &ExplicitGeometricMap, query_descriptor: &[f32], top_k: usize) -> Vec<(u32, f32)> {
    let mut scored: Vec<(u32, f32)> = map
        .references
        .iter()
        .map(|r| {
            let d = r
                .global_descriptor
                .iter()
                .zip(query_descriptor)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                .sqrt();
            (r.id, d)
        })
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

/// Exhaustive cross-reference audit of the map's internal structure.
pub fn verify_integrity(map: &ExplicitGeometricMap) -> Result<(), MapError> {
    let fail = |msg: String| Err(MapError::Integrity(msg));
    for (i, r) in map.references.iter().enumerate() {
        if r.id != i as u32 {
            return fail(format!("reference at index {i} has id {}", r.id));
        }
        if r.cluster_id >= map.cluster_count {
            return fail(format!(
                "reference {} assigned to cluster {} of {}",
                r.id, r.cluster_id, map.cluster_count
            ));
        }
        if r.global_descriptor.len() != GLOBAL_DESCRIPTOR_DIM {
            return fail(format!(
                "reference {} descriptor has length {}",
                r.id,
                r.global_descriptor.len()
            ));
        }
        let norm: f32 = r.global_descriptor.iter().map(|x| x * x).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return fail(format!("reference {} descriptor norm {norm}", r.id));
        }
        for (k, (pixel, pid)) in r.keypoints.iter().enumerate() {
            if pixel.x < 0.0
                || pixel.y < 0.0
                || pixel.x >= f64::from(r.intrinsics.width)
                || pixel.y >= f64::from(r.intrinsics.height)
            {
                return fail(format!("reference {} keypoint {k} out of bounds", r.id));
            }
            let Some(point) = map.points.get(*pid as usize) else {
                return fail(format!(
                    "reference {} keypoint {k} links to missing point {pid}",
                    r.id
                ));
            };
            if !point.track.contains(&(r.id, k as u32)) {
                return fail(format!(
                    "point {pid} track does not list observation ({}, {k})",
                    r.id
                ));
            }
        }
    }
    for (i, p) in map.points.iter().enumerate() {
        if p.id != i as u32 {
            return fail(format!("point at index {i} has id {}", p.id));
        }
        if p.track.len() < 2 {
            return fail(format!("point {} has track length {}", p.id, p.track.len()));
        }
        if !p.position.iter().all(|v| v.is_finite()) {
            return fail(format!("point {} has non-finite position", p.id));
        }
        for &(ref_id, kp) in &p.track {
            let Some(r) = map.references.get(ref_id as usize) else {
                return fail(format!("point {} observed from missing reference {ref_id}", p.id));
            };
            match r.keypoints.get(kp as usize) {
                Some(&(_, pid)) if pid == p.id => {}
                Some(&(_, pid)) => {
                    return fail(format!(
                        "observation ({ref_id}, {kp}) links to point {pid}, expected {}",
                        p.id
                    ));
                }
                None => {
                    return fail(format!(
                        "point {} lists missing keypoint {kp} in reference {ref_id}",
                        p.id
                    ));
                }
            }
        }
    }
    Ok(())
}
