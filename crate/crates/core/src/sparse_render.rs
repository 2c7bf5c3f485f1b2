//! Sparse patch rendering: instead of synthesizing whole reference views,
//! render only small square patches around reference keypoints.
//!
//! Patches from one reference usually overlap, so rays are deduplicated
//! per unique pixel before rendering. Each pixel's sampling stream is
//! seeded by (reference, pixel) alone — not by which patches requested it
//! — so deduplication is exactly invisible in the output, and a rendered
//! patch matches the same crop of a full [`render_image`] of that
//! reference seeded with [`reference_seed`].

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::egm::ExplicitGeometricMap;
use crate::geometry::{pixel_to_ray, GeometryError, Ray};
use crate::ilm::{pixel_seed, render_rays, IlmError, NerfModel, SamplingConfig};
use crate::seeding;

#[derive(Debug, Error)]
pub enum SparseRenderError {
    #[error("reference {0} is not in the map")]
    UnknownReference(u32),
    #[error("reference {reference} needs cluster {cluster}, but no such model was provided")]
    MissingClusterModel { reference: u32, cluster: u32 },
    #[error("patch size {0} must be odd, >= 3, and fit inside the image")]
    BadPatchSize(u32),
    #[error("keypoint ({x}, {y}) is outside reference {reference}")]
    KeypointOutOfBounds { reference: u32, x: f64, y: f64 },
    #[error(transparent)]
    Ilm(#[from] IlmError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One patch to render, centered on a reference keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRequest {
    pub reference_id: u32,
    /// Caller-side bookkeeping (index into the reference's keypoints).
    pub keypoint_index: u32,
    /// Continuous center coordinates of the keypoint.
    pub pixel: Vector2<f64>,
    /// Side length of the square patch (odd).
    pub patch_size: u32,
}

/// A rendered patch: row-major pixels starting at `origin` (top-left
/// pixel index in the reference image).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPatch {
    pub request: PatchRequest,
    pub origin: (u32, u32),
    pub pixels: Vec<[f32; 3]>,
}

/// Ray accounting for one rendering call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderStats {
    /// Rays actually rendered.
    pub unique_rays: usize,
    /// Sum of patch areas (rays before deduplication).
    pub total_patch_pixels: usize,
    /// Pixels a full render of every involved reference would cost.
    pub full_image_pixels: usize,
    pub n_patches: usize,
    /// Wall time spent in ray rendering.
    pub render_ms: f64,
}

/// Top-left pixel index of the patch grid for a keypoint.
///
/// The grid centers on the keypoint's pixel and shifts (never shrinks)
/// to stay inside a width x height image.
pub fn grid_origin(pixel: Vector2<f64>, side: u32, width: u32, height: u32) -> (u32, u32) {
    let half = i64::from(side / 2);
    let clamp = |center: f64, dim: u32| -> u32 {
        let c = (center - 0.5).round() as i64;
        (c - half).clamp(0, i64::from(dim) - i64::from(side)) as u32
    };
    (clamp(pixel.x, width), clamp(pixel.y, height))
}

/// Per-reference seed for patch pixels; feeding the same value to
/// [`render_image`] reproduces patch pixels exactly.
pub fn reference_seed(master: u64, reference_id: u32) -> u64 {
    seeding::mix(master, &[seeding::tag("reference"), u64::from(reference_id)])
}

fn canonical_order(a: &PatchRequest, b: &PatchRequest) -> std::cmp::Ordering {
    a.reference_id
        .cmp(&b.reference_id)
        .then(a.keypoint_index.cmp(&b.keypoint_index))
        .then(a.pixel.x.total_cmp(&b.pixel.x))
        .then(a.pixel.y.total_cmp(&b.pixel.y))
        .then(a.patch_size.cmp(&b.patch_size))
}

/// Pure ray accounting for a request set against width x height images:
/// the statistics `render_patches` would report, without rendering.
/// Deduplication happens within each reference; `full_image_pixels`
/// counts each involved reference once.
pub fn count_patch_stats(requests: &[PatchRequest], width: u32, height: u32) -> RenderStats {
    let mut by_ref: HashMap<u32, BTreeSet<(u32, u32)>> = HashMap::new();
    let mut total = 0usize;
    for req in requests {
        let side = req.patch_size;
        let (ox, oy) = grid_origin(req.pixel, side, width, height);
        let set = by_ref.entry(req.reference_id).or_default();
        for dy in 0..side {
            for dx in 0..side {
                set.insert((oy + dy, ox + dx));
            }
        }
        total += (side * side) as usize;
    }
    RenderStats {
        unique_rays: by_ref.values().map(BTreeSet::len).sum(),
        total_patch_pixels: total,
        full_image_pixels: by_ref.len() * (width * height) as usize,
        n_patches: requests.len(),
        render_ms: 0.0,
    }
}

/// Renders patches with per-reference ray deduplication.
pub fn render_patches(
    requests: &[PatchRequest],
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<(Vec<RenderedPatch>, RenderStats), SparseRenderError> {
    render_patches_with(requests, map, models, sampling, seed, true)
}

/// As [`render_patches`], with deduplication switchable for testing.
/// Output is bit-identical either way; only the stats and the work differ.
pub fn render_patches_with(
    requests: &[PatchRequest],
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    sampling: &SamplingConfig,
    seed: u64,
    dedup: bool,
) -> Result<(Vec<RenderedPatch>, RenderStats), SparseRenderError> {
    let mut sorted: Vec<PatchRequest> = requests.to_vec();
    sorted.sort_by(canonical_order);

    // Validate everything up front.
    for req in &sorted {
        let reference = map
            .references
            .get(req.reference_id as usize)
            .filter(|r| r.id == req.reference_id)
            .ok_or(SparseRenderError::UnknownReference(req.reference_id))?;
        let (w, h) = (reference.intrinsics.width, reference.intrinsics.height);
        if req.patch_size < 3 || req.patch_size % 2 == 0 || req.patch_size > w.min(h) {
            return Err(SparseRenderError::BadPatchSize(req.patch_size));
        }
        if req.pixel.x < 0.0
            || req.pixel.y < 0.0
            || req.pixel.x >= f64::from(w)
            || req.pixel.y >= f64::from(h)
        {
            return Err(SparseRenderError::KeypointOutOfBounds {
                reference: req.reference_id,
                x: req.pixel.x,
                y: req.pixel.y,
            });
        }
        let cluster = reference.cluster_id;
        let ok = models
            .get(cluster as usize)
            .is_some_and(|m| m.cluster_id == cluster);
        if !ok {
            return Err(SparseRenderError::MissingClusterModel {
                reference: req.reference_id,
                cluster,
            });
        }
    }

    let mut patches = Vec::with_capacity(sorted.len());
    let mut stats = RenderStats::default();
    stats.n_patches = sorted.len();

    let mut start = 0usize;
    while start < sorted.len() {
        let ref_id = sorted[start].reference_id;
        let mut end = start;
        while end < sorted.len() && sorted[end].reference_id == ref_id {
            end += 1;
        }
        let group = &sorted[start..end];
        start = end;

        let reference = &map.references[ref_id as usize];
        let model = &models[reference.cluster_id as usize];
        let (w, h) = (reference.intrinsics.width, reference.intrinsics.height);
        let ref_seed = reference_seed(seed, ref_id);
        stats.full_image_pixels += (w * h) as usize;

        // Pixels to render: the union of the patch grids, or (without
        // deduplication) every patch pixel separately.
        let origins: Vec<(u32, u32)> = group
            .iter()
            .map(|req| grid_origin(req.pixel, req.patch_size, w, h))
            .collect();
        let mut pixels: Vec<(u32, u32)> = Vec::new();
        if dedup {
            let mut set = BTreeSet::new();
            for (req, &(ox, oy)) in group.iter().zip(&origins) {
                for dy in 0..req.patch_size {
                    for dx in 0..req.patch_size {
                        set.insert((oy + dy, ox + dx));
                    }
                }
                stats.total_patch_pixels += (req.patch_size * req.patch_size) as usize;
            }
            pixels.extend(set.iter().map(|&(y, x)| (x, y)));
        } else {
            for (req, &(ox, oy)) in group.iter().zip(&origins) {
                for dy in 0..req.patch_size {
                    for dx in 0..req.patch_size {
                        pixels.push((ox + dx, oy + dy));
                    }
                }
                stats.total_patch_pixels += (req.patch_size * req.patch_size) as usize;
            }
        }
        stats.unique_rays += pixels.len();

        let mut rays: Vec<Ray> = Vec::with_capacity(pixels.len());
        let mut seeds: Vec<u64> = Vec::with_capacity(pixels.len());
        for &(x, y) in &pixels {
            rays.push(pixel_to_ray(
                Vector2::new(f64::from(x), f64::from(y)),
                &reference.intrinsics,
                &reference.pose,
                (sampling.t_near, sampling.t_far),
            )?);
            seeds.push(pixel_seed(ref_seed, x, y));
        }
        let t0 = Instant::now();
        let rendered = render_rays(&rays, &seeds, model, sampling)?;
        stats.render_ms += t0.elapsed().as_secs_f64() * 1e3;

        let colors: HashMap<(u32, u32), [f32; 3]> = pixels
            .iter()
            .zip(&rendered)
            .map(|(&(x, y), r)| {
                (
                    (x, y),
                    [
                        r.fine[0].clamp(0.0, 1.0),
                        r.fine[1].clamp(0.0, 1.0),
                        r.fine[2].clamp(0.0, 1.0),
                    ],
                )
            })
            .collect();
        for (req, &(ox, oy)) in group.iter().zip(&origins) {
            let mut out = Vec::with_capacity((req.patch_size * req.patch_size) as usize);
            for dy in 0..req.patch_size {
                for dx in 0..req.patch_size {
                    out.push(colors[&(ox + dx, oy + dy)]);
                }
            }
            patches.push(RenderedPatch {
                request: *req,
                origin: (ox, oy),
                pixels: out,
            });
        }
    }
    Ok((patches, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egm::{MapPoint3D, ReferenceEntry};
    use crate::features::GLOBAL_DESCRIPTOR_DIM;
    use crate::geometry::{CameraIntrinsics, Se3Pose};
    use crate::ilm::{render_image, ArchConfig, EncodingConfig, ModelConfig};
    use nalgebra::Vector3;

    #[test]
    fn grid_centers_on_the_keypoint() {
        // Keypoint at the center of pixel (8, 8) with a 3x3 patch.
        assert_eq!(grid_origin(Vector2::new(8.5, 8.5), 3, 64, 64), (7, 7));
        // 15x15 near the corner shifts to stay inside.
        assert_eq!(grid_origin(Vector2::new(0.0, 0.0), 15, 128, 128), (0, 0));
        assert_eq!(grid_origin(Vector2::new(127.7, 127.2), 15, 128, 128), (113, 113));
        // Interior 15x15: centered.
        assert_eq!(grid_origin(Vector2::new(64.5, 32.5), 15, 128, 128), (57, 25));
    }

    #[test]
    fn stats_count_rays_exactly() {
        // 500 keypoints at 15x15 in a 640x480 image: the headline saving.
        let requests: Vec<PatchRequest> = (0..500)
            .map(|i| PatchRequest {
                reference_id: 0,
                keypoint_index: i,
                pixel: Vector2::new(
                    20.0 + f64::from(i % 25) * 24.0,
                    20.0 + f64::from(i / 25) * 22.0,
                ),
                patch_size: 15,
            })
            .collect();
        let stats = count_patch_stats(&requests, 640, 480);
        assert_eq!(stats.total_patch_pixels, 112_500);
        assert_eq!(stats.full_image_pixels, 307_200);
        assert!(stats.unique_rays <= stats.total_patch_pixels);
        assert!(stats.full_image_pixels as f64 / stats.total_patch_pixels as f64 >= 2.7);
    }

    fn tiny_fixture() -> (ExplicitGeometricMap, Vec<NerfModel<f32>>) {
        let intr = CameraIntrinsics::new(16.0, 16.0, 8.0, 8.0, 16, 16).unwrap();
        let pose = Se3Pose::look_at(
            Vector3::new(0.0, -2.0, 1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let mut descriptor = vec![0.0f32; GLOBAL_DESCRIPTOR_DIM];
        descriptor[0] = 1.0;
        let map = ExplicitGeometricMap {
            points: vec![MapPoint3D {
                id: 0,
                position: Vector3::zeros(),
                track: vec![(0, 0), (0, 1)],
            }],
            references: vec![ReferenceEntry {
                id: 0,
                pose,
                intrinsics: intr,
                keypoints: vec![
                    (Vector2::new(5.5, 6.5), 0),
                    (Vector2::new(9.5, 7.5), 0),
                ],
                global_descriptor: descriptor,
                cluster_id: 0,
            }],
            cluster_count: 1,
        };
        let config = ModelConfig {
            encoding: EncodingConfig {
                position_freqs: 2,
                direction_freqs: 1,
                include_identity: true,
            },
            arch: ArchConfig {
                trunk_depth: 2,
                trunk_width: 8,
                color_hidden_width: 6,
            },
            position_scale: 0.4,
        };
        let model = NerfModel::init(0, &config, 31).unwrap();
        (map, vec![model])
    }

    fn sampling() -> SamplingConfig {
        SamplingConfig {
            n_coarse: 6,
            n_fine: 6,
            stratified: true,
            t_near: 0.3,
            t_far: 5.0,
        }
    }

    fn overlapping_requests() -> Vec<PatchRequest> {
        vec![
            PatchRequest {
                reference_id: 0,
                keypoint_index: 0,
                pixel: Vector2::new(5.5, 6.5),
                patch_size: 5,
            },
            PatchRequest {
                reference_id: 0,
                keypoint_index: 1,
                pixel: Vector2::new(7.5, 6.5),
                patch_size: 5,
            },
        ]
    }

    #[test]
    fn dedup_is_invisible_in_the_output() {
        let (map, models) = tiny_fixture();
        let requests = overlapping_requests();
        let (with, stats_with) =
            render_patches_with(&requests, &map, &models, &sampling(), 99, true).unwrap();
        let (without, stats_without) =
            render_patches_with(&requests, &map, &models, &sampling(), 99, false).unwrap();
        assert_eq!(with, without);
        // The two 5x5 patches overlap by 3x5 = 15 pixels.
        assert_eq!(stats_with.total_patch_pixels, 50);
        assert_eq!(stats_with.unique_rays, 35);
        assert_eq!(stats_without.unique_rays, 50);
    }

    #[test]
    fn request_order_does_not_matter() {
        let (map, models) = tiny_fixture();
        let mut requests = overlapping_requests();
        let (a, _) = render_patches(&requests, &map, &models, &sampling(), 7).unwrap();
        requests.reverse();
        let (b, _) = render_patches(&requests, &map, &models, &sampling(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patch_matches_full_image_crop() {
        let (map, models) = tiny_fixture();
        let reference = &map.references[0];
        let full = render_image(
            &models[0],
            &reference.pose,
            &reference.intrinsics,
            &sampling(),
            reference_seed(42, 0),
        )
        .unwrap();
        let requests = vec![PatchRequest {
            reference_id: 0,
            keypoint_index: 0,
            pixel: Vector2::new(5.5, 6.5),
            patch_size: 5,
        }];
        let (patches, _) = render_patches(&requests, &map, &models, &sampling(), 42).unwrap();
        let patch = &patches[0];
        let (ox, oy) = patch.origin;
        for dy in 0..5u32 {
            for dx in 0..5u32 {
                let expect = full.get(ox + dx, oy + dy);
                let got = patch.pixels[(dy * 5 + dx) as usize];
                assert_eq!(expect, got, "pixel ({}, {})", ox + dx, oy + dy);
            }
        }
    }

    #[test]
    fn bad_requests_are_rejected() {
        let (map, models) = tiny_fixture();
        let mut bad_ref = overlapping_requests();
        bad_ref[0].reference_id = 9;
        assert!(matches!(
            render_patches(&bad_ref, &map, &models, &sampling(), 0),
            Err(SparseRenderError::UnknownReference(9))
        ));
        let mut bad_size = overlapping_requests();
        bad_size[0].patch_size = 4;
        assert!(matches!(
            render_patches(&bad_size, &map, &models, &sampling(), 0),
            Err(SparseRenderError::BadPatchSize(4))
        ));
        let mut bad_pixel = overlapping_requests();
        bad_pixel[0].pixel = Vector2::new(30.0, 2.0);
        assert!(matches!(
            render_patches(&bad_pixel, &map, &models, &sampling(), 0),
            Err(SparseRenderError::KeypointOutOfBounds { .. })
        ));
        assert!(matches!(
            render_patches(&overlapping_requests(), &map, &[], &sampling(), 0),
            Err(SparseRenderError::MissingClusterModel { .. })
        ));
    }
}
