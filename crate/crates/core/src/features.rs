//! Hand-written feature extraction and matching.
//!
//! Deliberately classical stand-ins for learned components, behind small
//! interfaces so they could be swapped later: a Shi-Tomasi corner detector,
//! a grid-statistics global descriptor for image retrieval, a SIFT-like
//! gradient-histogram patch descriptor, and a mutual-nearest-neighbor
//! matcher with a ratio test.
//!
//! Keypoint pixels are continuous center coordinates: a corner detected at
//! integer pixel (i, j) has `pixel = (i + 0.5, j + 0.5)`, which is exactly
//! where [`crate::geometry::project`] lands for the corresponding 3D point.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::Image;

pub const GLOBAL_DESCRIPTOR_DIM: usize = 64;
pub const PATCH_DESCRIPTOR_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("patch side {0} is too small (need >= 3)")]
    PatchTooSmall(u32),
    #[error("patch data has {got} pixels, expected {expected} for side {side}")]
    PatchSizeMismatch { got: usize, expected: usize, side: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Continuous image coordinates of the corner (pixel center).
    pub pixel: Vector2<f64>,
    /// Shi-Tomasi response (min structure-tensor eigenvalue), >= 0.
    pub score: f64,
}

/// Detection interface; the seam where a learned detector could plug in.
pub trait KeypointDetector: Sync {
    fn detect(&self, image: &Image) -> Vec<Keypoint>;
}

/// Global description interface; returns a unit-norm vector.
pub trait GlobalDescriptor: Sync {
    fn describe(&self, image: &Image) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub max_count: usize,
    pub nms_radius: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_count: 500,
            nms_radius: 3,
        }
    }
}

/// Shi-Tomasi detector: Sobel gradients, 3x3 structure tensor, minimum
/// eigenvalue response, greedy radius-based non-maximum suppression.
#[derive(Debug, Clone, Copy)]
pub struct ShiTomasi(pub DetectorConfig);

impl KeypointDetector for ShiTomasi {
    fn detect(&self, image: &Image) -> Vec<Keypoint> {
        detect_keypoints(image, self.0.max_count, self.0.nms_radius)
    }
}

/// Grid-statistics global descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridStats;

impl GlobalDescriptor for GridStats {
    fn describe(&self, image: &Image) -> Vec<f32> {
        global_descriptor(image)
    }
}

fn luma_buffer(image: &Image) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut luma = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            luma[y * w + x] = image.luminance(x as u32, y as u32);
        }
    }
    luma
}

/// Detects corners and returns at most `max_count`, strongest first.
///
/// Deterministic: candidates are ordered by (response desc, y, x) before
/// suppression, so equal responses resolve identically on every run.
pub fn detect_keypoints(image: &Image, max_count: usize, nms_radius: u32) -> Vec<Keypoint> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 5 || h < 5 || max_count == 0 {
        return Vec::new();
    }
    let luma = luma_buffer(image);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = |dx: isize, dy: isize| luma[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            gx[y * w + x] = (l(1, -1) + 2.0 * l(1, 0) + l(1, 1)) - (l(-1, -1) + 2.0 * l(-1, 0) + l(-1, 1));
            gy[y * w + x] = (l(-1, 1) + 2.0 * l(0, 1) + l(1, 1)) - (l(-1, -1) + 2.0 * l(0, -1) + l(1, -1));
        }
    }

    // Min eigenvalue of the 3x3-summed structure tensor.
    let mut candidates: Vec<(f32, u32, u32)> = Vec::new();
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for dy in 0..3 {
                for dx in 0..3 {
                    let i = (y + dy - 1) * w + (x + dx - 1);
                    a += gx[i] * gx[i];
                    b += gx[i] * gy[i];
                    c += gy[i] * gy[i];
                }
            }
            let half_trace = 0.5 * (a + c);
            let det_term = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let response = half_trace - det_term;
            if response > 1e-9 {
                candidates.push((response, y as u32, x as u32));
            }
        }
    }
    candidates.sort_by(|l, r| {
        r.0.partial_cmp(&l.0)
            .unwrap()
            .then(l.1.cmp(&r.1))
            .then(l.2.cmp(&r.2))
    });

    let r2 = (nms_radius * nms_radius) as i64;
    let mut accepted: Vec<(f32, u32, u32)> = Vec::new();
    for (resp, y, x) in candidates {
        let suppressed = accepted.iter().any(|&(_, ay, ax)| {
            let dx = i64::from(ax) - i64::from(x);
            let dy = i64::from(ay) - i64::from(y);
            dx * dx + dy * dy <= r2
        });
        if !suppressed {
            accepted.push((resp, y, x));
            if accepted.len() == max_count {
                break;
            }
        }
    }

    accepted
        .into_iter()
        .map(|(resp, y, x)| Keypoint {
            pixel: Vector2::new(f64::from(x) + 0.5, f64::from(y) + 0.5),
            score: f64::from(resp),
        })
        .collect()
}

/// Gradient magnitude via central differences; zero along the border.
fn gradient_magnitude(luma: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut mag = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = 0.5 * (luma[y * w + x + 1] - luma[y * w + x - 1]);
            let dy = 0.5 * (luma[(y + 1) * w + x] - luma[(y - 1) * w + x]);
            mag[y * w + x] = (dx * dx + dy * dy).sqrt();
        }
    }
    mag
}

/// 64-dim global descriptor: a 4x4 spatial grid, each cell contributing
/// (mean R, mean G, mean B, mean gradient magnitude), L2-normalized.
///
/// A zero image (no color, no gradient) maps to the uniform unit vector.
pub fn global_descriptor(image: &Image) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let luma = luma_buffer(image);
    let mag = gradient_magnitude(&luma, w, h);
    let mut desc = Vec::with_capacity(GLOBAL_DESCRIPTOR_DIM);
    for cy in 0..4 {
        for cx in 0..4 {
            let x0 = cx * w / 4;
            let x1 = (cx + 1) * w / 4;
            let y0 = cy * h / 4;
            let y1 = (cy + 1) * h / 4;
            let n = ((x1 - x0) * (y1 - y0)).max(1) as f32;
            let (mut r, mut g, mut b, mut m) = (0.0f32, 0.0, 0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = image.get(x as u32, y as u32);
                    r += px[0];
                    g += px[1];
                    b += px[2];
                    m += mag[y * w + x];
                }
            }
            desc.extend_from_slice(&[r / n, g / n, b / n, m / n]);
        }
    }
    normalize_or_uniform(&mut desc);
    desc
}

/// L2-normalizes in place; an (effectively) zero vector becomes uniform.
fn normalize_or_uniform(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm < 1e-12 {
        let u = 1.0 / (v.len() as f32).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    /// Unit-norm 128-vector (4x4 cells x 8 orientation bins).
    pub d: Vec<f32>,
    /// Texture strength in [0, 1].
    pub score: f32,
}

/// SIFT-like descriptor of a square patch given row-major RGB pixels.
///
/// Grayscale gradients (central differences) vote into 8-bin orientation
/// histograms over a 4x4 cell grid with soft assignment between adjacent
/// bins; the histogram is L2-normalized, clamped at 0.2, and renormalized.
/// A constant patch has no gradients and maps to the uniform unit vector
/// with score 0. Adding a constant intensity offset leaves the descriptor
/// unchanged.
pub fn patch_descriptor(pixels: &[[f32; 3]], side: u32) -> Result<PatchDescriptor, FeatureError> {
    if side < 3 {
        return Err(FeatureError::PatchTooSmall(side));
    }
    let s = side as usize;
    if pixels.len() != s * s {
        return Err(FeatureError::PatchSizeMismatch {
            got: pixels.len(),
            expected: s * s,
            side,
        });
    }
    let luma: Vec<f32> = pixels
        .iter()
        .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();

    let mut hist = vec![0.0f32; PATCH_DESCRIPTOR_DIM];
    let mut mag_sum = 0.0f32;
    let mut count = 0usize;
    for y in 1..s - 1 {
        for x in 1..s - 1 {
            let dx = 0.5 * (luma[y * s + x + 1] - luma[y * s + x - 1]);
            let dy = 0.5 * (luma[(y + 1) * s + x] - luma[(y - 1) * s + x]);
            let mag = (dx * dx + dy * dy).sqrt();
            mag_sum += mag;
            count += 1;
            if mag < 1e-12 {
                continue;
            }
            let cell_x = (x * 4 / s).min(3);
            let cell_y = (y * 4 / s).min(3);
            let cell = cell_y * 4 + cell_x;
            // Orientation in [0, 8) bins with linear soft assignment.
            let angle = f64::from(dy).atan2(f64::from(dx));
            let pos = (angle + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * 8.0;
            let b0 = pos.floor();
            let frac = (pos - b0) as f32;
            let b0 = (b0 as usize) % 8;
            let b1 = (b0 + 1) % 8;
            hist[cell * 8 + b0] += mag * (1.0 - frac);
            hist[cell * 8 + b1] += mag * frac;
        }
    }

    let norm = hist.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm < 1e-12 {
        let u = 1.0 / (PATCH_DESCRIPTOR_DIM as f32).sqrt();
        return Ok(PatchDescriptor {
            d: vec![u; PATCH_DESCRIPTOR_DIM],
            score: 0.0,
        });
    }
    hist.iter_mut().for_each(|x| *x = (*x / norm).min(0.2));
    normalize_or_uniform(&mut hist);

    // Mean gradient magnitude, scaled so strong texture saturates at 1.
    let mean_mag = mag_sum / count.max(1) as f32;
    Ok(PatchDescriptor {
        d: hist,
        score: (4.0 * mean_mag).clamp(0.0, 1.0),
    })
}

/// 2D-2D matches as (query index, reference index, descriptor distance),
/// one-to-one on both sides, sorted by query index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize, f32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Lowe ratio: best/second-best must fall below this, on both sides.
    pub ratio: f32,
    /// Absolute descriptor distance cutoff.
    pub max_distance: f32,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            max_distance: 0.7,
        }
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

/// Mutual-nearest-neighbor matching with a two-sided ratio test and an
/// absolute distance cutoff.
///
/// Equal-distance ties resolve to the smaller index (argmin scans in index
/// order with strict improvement), making the matcher symmetric: swapping
/// the two sides transposes the MatchSet.
pub fn match_descriptors(
    query: &[PatchDescriptor],
    reference: &[PatchDescriptor],
    ratio: f32,
    max_distance: f32,
) -> MatchSet {
    if query.is_empty() || reference.is_empty() {
        return MatchSet::default();
    }
    let nq = query.len();
    let nr = reference.len();
    let mut dist = vec![0.0f32; nq * nr];
    for (qi, q) in query.iter().enumerate() {
        for (ri, r) in reference.iter().enumerate() {
            dist[qi * nr + ri] = euclidean(&q.d, &r.d);
        }
    }

    // (best index, best distance, second-best distance) per row/column.
    let best_over = |n: usize, m: usize, at: &dyn Fn(usize, usize) -> f32| {
        (0..n)
            .map(|i| {
                let mut best = (usize::MAX, f32::INFINITY);
                let mut second = f32::INFINITY;
                for j in 0..m {
                    let d = at(i, j);
                    if d < best.1 {
                        second = best.1;
                        best = (j, d);
                    } else if d < second {
                        second = d;
                    }
                }
                (best.0, best.1, second)
            })
            .collect::<Vec<_>>()
    };
    let q_best = best_over(nq, nr, &|q, r| dist[q * nr + r]);
    let r_best = best_over(nr, nq, &|r, q| dist[q * nr + r]);

    let passes_ratio = |best: f32, second: f32| second.is_infinite() || best < ratio * second;
    let mut pairs = Vec::new();
    for (qi, &(ri, d, q_second)) in q_best.iter().enumerate() {
        let (back, _, r_second) = r_best[ri];
        if back == qi
            && d < max_distance
            && passes_ratio(d, q_second)
            && passes_ratio(d, r_second)
        {
            pairs.push((qi, ri, d));
        }
    }
    MatchSet { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(size: u32, cell: u32) -> Image {
        let mut img = Image::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let v = if ((x / cell) + (y / cell)) % 2 == 0 {
                    1.0
                } else {
                    0.0
                };
                img.set(x, y, [v, v, v]);
            }
        }
        img
    }

    #[test]
    fn uniform_image_has_no_keypoints() {
        let mut img = Image::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                img.set(x, y, [0.5, 0.5, 0.5]);
            }
        }
        assert!(detect_keypoints(&img, 100, 3).is_empty());
    }

    #[test]
    fn single_white_pixel_is_detected_nearby() {
        let mut img = Image::new(32, 32);
        img.set(16, 16, [1.0, 1.0, 1.0]);
        let kps = detect_keypoints(&img, 50, 2);
        assert!(!kps.is_empty());
        for kp in &kps {
            let d = (kp.pixel - Vector2::new(16.5, 16.5)).norm();
            assert!(d <= 3.0, "keypoint {:?} far from the white pixel", kp.pixel);
        }
    }

    #[test]
    fn checkerboard_corners_align_with_grid() {
        let cell = 8u32;
        let img = checkerboard(128, cell);
        let kps = detect_keypoints(&img, 500, 3);
        assert!(kps.len() >= 100, "found only {} keypoints", kps.len());
        for kp in &kps {
            // Nearest cell intersection in continuous coordinates.
            let gx = (kp.pixel.x / f64::from(cell)).round() * f64::from(cell);
            let gy = (kp.pixel.y / f64::from(cell)).round() * f64::from(cell);
            let d = (kp.pixel - Vector2::new(gx, gy)).norm();
            assert!(d <= 1.0, "keypoint {:?} is {d:.2} px from a corner", kp.pixel);
        }
    }

    #[test]
    fn detector_is_deterministic() {
        let img = checkerboard(96, 7);
        assert_eq!(detect_keypoints(&img, 300, 3), detect_keypoints(&img, 300, 3));
    }

    #[test]
    fn global_descriptor_is_unit_norm_and_discriminative() {
        let img = checkerboard(64, 8);
        let d = global_descriptor(&img);
        assert_eq!(d.len(), GLOBAL_DESCRIPTOR_DIM);
        let norm: f32 = d.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(d, global_descriptor(&img));

        // An asymmetric image must differ from its 180-degree rotation.
        let mut asym = Image::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                let v = if x < 20 && y < 20 { 1.0 } else { 0.1 };
                img_set_gradient(&mut asym, x, y, v);
            }
        }
        let mut rotated = Image::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                rotated.set(63 - x, 63 - y, asym.get(x, y));
            }
        }
        let da = global_descriptor(&asym);
        let db = global_descriptor(&rotated);
        assert!(euclidean(&da, &db) > 0.1);
    }

    fn img_set_gradient(img: &mut Image, x: u32, y: u32, v: f32) {
        let shade = v * (0.3 + 0.7 * (x as f32) / 64.0);
        img.set(x, y, [shade, shade * 0.8, shade * 0.6]);
    }

    #[test]
    fn constant_patch_gives_uniform_descriptor() {
        let pixels = vec![[0.4, 0.4, 0.4]; 15 * 15];
        let pd = patch_descriptor(&pixels, 15).unwrap();
        assert_eq!(pd.score, 0.0);
        let u = 1.0 / (PATCH_DESCRIPTOR_DIM as f32).sqrt();
        assert!(pd.d.iter().all(|&x| (x - u).abs() < 1e-7));
    }

    #[test]
    fn patch_descriptor_ignores_intensity_offset() {
        let mut pixels = Vec::new();
        for y in 0..15u32 {
            for x in 0..15u32 {
                let v = ((x * 3 + y * 7) % 5) as f32 / 10.0;
                pixels.push([v, v * 0.5, v * 0.25]);
            }
        }
        let base = patch_descriptor(&pixels, 15).unwrap();
        let offset: Vec<[f32; 3]> = pixels
            .iter()
            .map(|[r, g, b]| [r + 0.2, g + 0.2, b + 0.2])
            .collect();
        let shifted = patch_descriptor(&offset, 15).unwrap();
        for (a, b) in base.d.iter().zip(&shifted.d) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn patch_descriptor_rejects_small_patches() {
        assert!(matches!(
            patch_descriptor(&[[0.0; 3]; 4], 2),
            Err(FeatureError::PatchTooSmall(2))
        ));
    }

    #[test]
    fn identical_descriptor_lists_match_identically() {
        let mut descs = Vec::new();
        for i in 0..10 {
            let mut d = vec![0.0f32; PATCH_DESCRIPTOR_DIM];
            d[i] = 1.0;
            descs.push(PatchDescriptor { d, score: 1.0 });
        }
        let m = match_descriptors(&descs, &descs, 0.9, 0.7);
        assert_eq!(m.pairs.len(), 10);
        for (qi, ri, d) in m.pairs {
            assert_eq!(qi, ri);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn orthogonal_sets_do_not_match() {
        let mk = |offset: usize| {
            (0..5)
                .map(|i| {
                    let mut d = vec![0.0f32; PATCH_DESCRIPTOR_DIM];
                    d[offset + i] = 1.0;
                    PatchDescriptor { d, score: 1.0 }
                })
                .collect::<Vec<_>>()
        };
        // Orthogonal unit vectors sit at distance sqrt(2) > max_distance.
        let m = match_descriptors(&mk(0), &mk(64), 0.9, 0.7);
        assert!(m.pairs.is_empty());
    }
}
