//! Scene division: clustering reference cameras so each cluster gets its
//! own radiance-field model.
//!
//! Clustering runs on camera centers only (k-means++ seeding followed by
//! Lloyd iterations); orientations are ignored. An empty cluster is
//! repaired by stealing the point currently farthest from its assigned
//! centroid, so every cluster always holds at least one reference.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::egm::ExplicitGeometricMap;
use crate::geometry::Se3Pose;
use crate::seeding;

#[derive(Debug, Error)]
pub enum DivisionError {
    #[error("cannot form {requested} clusters from {available} references")]
    TooFewPoints { requested: usize, available: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("reference id {0} is not in the map")]
    UnknownReference(u32),
}

/// Result of clustering: k centroids, one assignment per input pose, and
/// the within-cluster sum of squared distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vector3<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn nearest_centroid(p: &Vector3<f64>, centroids: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Assigns every point to its nearest centroid (ties to the lower index),
/// then repairs empty clusters by stealing the point farthest from its
/// assigned centroid among clusters that can spare one. The empty cluster's
/// centroid moves onto the stolen point, so repairs never increase inertia.
fn assign_and_repair(
    points: &[Vector3<f64>],
    centroids: &mut [Vector3<f64>],
    assignments: &mut [usize],
) {
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest_centroid(p, centroids).0;
    }
    let mut counts = vec![0usize; centroids.len()];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..centroids.len() {
        if counts[empty] > 0 {
            continue;
        }
        let mut victim: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = (p - centroids[assignments[i]]).norm_squared();
            if victim.map_or(true, |(_, best)| d > best) {
                victim = Some((i, d));
            }
        }
        if let Some((i, _)) = victim {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
            centroids[empty] = points[i];
        }
    }
}

fn update_centroids(points: &[Vector3<f64>], assignments: &[usize], centroids: &mut [Vector3<f64>]) {
    for (k, c) in centroids.iter_mut().enumerate() {
        let mut sum = Vector3::zeros();
        let mut n = 0usize;
        for (p, &a) in points.iter().zip(assignments) {
            if a == k {
                sum += p;
                n += 1;
            }
        }
        if n > 0 {
            *c = sum / n as f64;
        }
    }
}

/// Clusters the camera centers of `poses` into `n_clusters` groups.
///
/// Deterministic for a fixed seed. Terminates when assignments stop
/// changing or after `max_iters` Lloyd iterations; either way a final
/// assignment pass runs against the final centroids, so the returned
/// assignment is nearest-consistent with the returned centroids.
pub fn kmeans_poses(
    poses: &[Se3Pose],
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterModel, DivisionError> {
    if n_clusters == 0 {
        return Err(DivisionError::ZeroClusters);
    }
    if poses.len() < n_clusters {
        return Err(DivisionError::TooFewPoints {
            requested: n_clusters,
            available: poses.len(),
        });
    }
    let points: Vec<Vector3<f64>> = poses.iter().map(Se3Pose::camera_center).collect();
    let mut rng = seeding::stream_rng(seed, "kmeans", &[]);

    // k-means++ seeding: first centroid uniform, then d^2-weighted.
    let mut centroids: Vec<Vector3<f64>> = Vec::with_capacity(n_clusters);
    centroids.push(points[rng.random_range(0..points.len())]);
    while centroids.len() < n_clusters {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).1)
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total <= 0.0 {
            // Every point coincides with a centroid already; pick uniformly.
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        };
        centroids.push(points[next]);
    }

    // usize::MAX sentinel so the first iteration never reads as converged.
    let mut assignments = vec![usize::MAX; points.len()];
    let mut scratch = vec![0usize; points.len()];
    for _ in 0..max_iters {
        assign_and_repair(&points, &mut centroids, &mut scratch);
        let converged = scratch == assignments;
        assignments.copy_from_slice(&scratch);
        if converged {
            break;
        }
        update_centroids(&points, &assignments, &mut centroids);
    }
    // Re-align assignments with the final centroids (no-op after a clean
    // convergence, required when max_iters ran out mid-update).
    assign_and_repair(&points, &mut centroids, &mut assignments);

    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &k)| (p - centroids[k]).norm_squared())
        .sum();
    Ok(ClusterModel {
        centroids,
        assignments,
        inertia,
    })
}

/// Looks up the cluster that owns a reference image.
pub fn cluster_for_query(reference_id: u32, map: &ExplicitGeometricMap) -> Result<u32, DivisionError> {
    map.references
        .iter()
        .find(|r| r.id == reference_id)
        .map(|r| r.cluster_id)
        .ok_or(DivisionError::UnknownReference(reference_id))
}
