//! Absolute pose from 2D-3D correspondences: a control-point PnP solver
//! (four control points in the general case, three for planar scenes),
//! Gauss-Newton pose polish on reprojection error, and a RANSAC loop
//! with adaptive iteration count and inlier refit.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Se3Pose};
use crate::seeding;

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(&'static str),
    #[error("no consensus: best model had {best_inliers} inliers")]
    NoConsensus { best_inliers: usize },
}

/// A 2D observation (continuous pixel coordinates) of a 3D world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub point2d: Vector2<f64>,
    pub point3d: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Se3Pose,
    /// Indices into the input correspondences, consistent with `pose`:
    /// every listed index reprojects within the threshold.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            confidence: 0.9999,
            max_iters: 10_000,
            min_inliers: 12,
        }
    }
}

/// Pixel distance between the observation and the reprojected point;
/// infinite when the point falls behind the camera.
pub fn reprojection_error(
    pose: &Se3Pose,
    intrinsics: &CameraIntrinsics,
    corr: &Correspondence2D3D,
) -> f64 {
    match project(pose, intrinsics, &corr.point3d) {
        Some(proj) => (proj - corr.point2d).norm(),
        None => f64::INFINITY,
    }
}

const PAIRS4: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
const PAIRS3: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Centroid plus principal directions scaled by the spread along each.
/// Returns the control points and whether the planar branch applies.
fn control_points(points: &[Vector3<f64>]) -> Result<(Vec<Vector3<f64>>, bool), PnpError> {
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if lam[1] <= lam[0] * 1e-14 {
        return Err(PnpError::DegenerateGeometry("points are collinear"));
    }
    let planar = lam[2] <= lam[0] * 1e-12;
    let mut controls = vec![centroid];
    let count = if planar { 2 } else { 3 };
    for i in 0..count {
        let axis = eig.eigenvectors.column(order[i]).into_owned();
        controls.push(centroid + axis * lam[i].sqrt());
    }
    Ok((controls, planar))
}

/// Coefficients expressing each point as an affine combination of the
/// control points (rows sum to one).
fn barycentric(points: &[Vector3<f64>], controls: &[Vector3<f64>]) -> Vec<Vec<f64>> {
    let m = controls.len();
    let c0 = controls[0];
    let basis = DMatrix::from_fn(3, m - 1, |r, c| (controls[c + 1] - c0)[r]);
    // Square for m = 4; least squares in the plane for m = 3.
    let normal = basis.transpose() * &basis;
    let inv = normal
        .try_inverse()
        .expect("control points span the requested dimensions");
    points
        .iter()
        .map(|p| {
            let rhs = basis.transpose() * DVector::from_column_slice((p - c0).as_slice());
            let a = &inv * rhs;
            let mut alpha = vec![1.0 - a.iter().sum::<f64>()];
            alpha.extend(a.iter().copied());
            alpha
        })
        .collect()
}

/// The 2n x 3m linear system whose null space holds the camera-frame
/// control points.
fn build_system(
    corrs: &[Correspondence2D3D],
    alphas: &[Vec<f64>],
    intrinsics: &CameraIntrinsics,
) -> DMatrix<f64> {
    let m = alphas[0].len();
    let mut mat = DMatrix::zeros(2 * corrs.len(), 3 * m);
    for (i, (corr, alpha)) in corrs.iter().zip(alphas).enumerate() {
        for (j, &a) in alpha.iter().enumerate() {
            mat[(2 * i, 3 * j)] = a * intrinsics.fx;
            mat[(2 * i, 3 * j + 2)] = a * (intrinsics.cx - corr.point2d.x);
            mat[(2 * i + 1, 3 * j + 1)] = a * intrinsics.fy;
            mat[(2 * i + 1, 3 * j + 2)] = a * (intrinsics.cy - corr.point2d.y);
        }
    }
    mat
}

/// Eigenvectors of `M^T M` for the `count` smallest eigenvalues,
/// ascending.
fn null_vectors(mat: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    let mtm = mat.transpose() * mat;
    let dim = mtm.nrows();
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .iter()
        .take(count)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect()
}

fn control_distances_sq(controls: &[Vector3<f64>], pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(a, b)| (controls[a] - controls[b]).norm_squared())
        .collect()
}

/// Differences of one null vector's control-point blocks for each pair.
fn pair_diffs(v: &DVector<f64>, pairs: &[(usize, usize)]) -> Vec<Vector3<f64>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            Vector3::new(
                v[3 * a] - v[3 * b],
                v[3 * a + 1] - v[3 * b + 1],
                v[3 * a + 2] - v[3 * b + 2],
            )
        })
        .collect()
}

/// Kabsch alignment: the rigid transform taking world points onto
/// camera points, least squares over all correspondences.
fn kabsch(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> Option<Se3Pose> {
    let n = world.len() as f64;
    let cw: Vector3<f64> = world.iter().sum::<Vector3<f64>>() / n;
    let cc: Vector3<f64> = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (w - cw) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let mut v = svd.v_t?.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    Se3Pose::new(r, cc - r * cw).ok()
}

/// Pose from a candidate null-space combination: rebuild camera-frame
/// points, fix the depth sign by majority, align, and score by total
/// squared reprojection error.
fn pose_from_candidate(
    x: &DVector<f64>,
    alphas: &[Vec<f64>],
    corrs: &[Correspondence2D3D],
    intrinsics: &CameraIntrinsics,
) -> Option<(Se3Pose, f64)> {
    let m = x.len() / 3;
    if x.norm() < 1e-12 {
        return None;
    }
    let controls: Vec<Vector3<f64>> = (0..m)
        .map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]))
        .collect();
    let mut camera: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .zip(&controls)
                .map(|(&a, c)| c * a)
                .sum::<Vector3<f64>>()
        })
        .collect();
    let negative = camera.iter().filter(|p| p.z < 0.0).count();
    if 2 * negative > camera.len() {
        for p in &mut camera {
            *p = -*p;
        }
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.point3d).collect();
    let pose = kabsch(&world, &camera)?;
    let mut err = 0.0;
    for corr in corrs {
        let e = reprojection_error(&pose, intrinsics, corr);
        err += if e.is_finite() { e * e } else { 1e12 };
    }
    Some((pose, err))
}

/// Quadratic system rows `||sum_k beta_k d_k||^2 = rho` for each pair,
/// as coefficients over the monomials `beta_i beta_j`, `i <= j`,
/// ordered column-major by `j`: for two null vectors `[b11, b12, b22]`,
/// for four `[b11, b12, b22, b13, b23, b33, b14, b24, b34, b44]`.
fn distance_rows(diffs: &[Vec<Vector3<f64>>], n_pairs: usize) -> DMatrix<f64> {
    let k = diffs.len();
    let n_mono = k * (k + 1) / 2;
    let mut l = DMatrix::zeros(n_pairs, n_mono);
    for p in 0..n_pairs {
        let mut col = 0;
        for j in 0..k {
            for i in 0..=j {
                let d = diffs[i][p].dot(&diffs[j][p]);
                l[(p, col)] = if i == j { d } else { 2.0 * d };
                col += 1;
            }
        }
    }
    l
}

/// Gauss-Newton on the pairwise-distance residuals over the betas.
fn refine_betas(l: &DMatrix<f64>, rho: &[f64], betas: &mut [f64]) {
    let k = betas.len();
    let n_pairs = l.nrows();
    for _ in 0..10 {
        let mut jac = DMatrix::zeros(n_pairs, k);
        let mut res = DVector::zeros(n_pairs);
        for p in 0..n_pairs {
            let mut col = 0;
            let mut f = 0.0;
            for j in 0..k {
                for i in 0..=j {
                    let c = l[(p, col)];
                    f += c * betas[i] * betas[j];
                    jac[(p, i)] += c * betas[j];
                    jac[(p, j)] += c * betas[i];
                    col += 1;
                }
            }
            res[p] = f - rho[p];
        }
        match jac.svd(true, true).solve(&(-res), 1e-12) {
            Ok(delta) => {
                for (b, d) in betas.iter_mut().zip(delta.iter()) {
                    *b += d;
                }
                if delta.norm() < 1e-13 {
                    break;
                }
            }
            Err(_) => break,
        }
    }
}

/// Least-squares solve of selected monomial columns, used to seed the
/// beta refinement.
fn solve_columns(l: &DMatrix<f64>, rho: &[f64], cols: &[usize]) -> Option<DVector<f64>> {
    let sub = DMatrix::from_fn(l.nrows(), cols.len(), |r, c| l[(r, cols[c])]);
    let rhs = DVector::from_column_slice(rho);
    sub.svd(true, true).solve(&rhs, 1e-12).ok()
}

/// Seed candidates for the four-control-point case, mirroring the
/// classic scheme: assume one, two, or three active null directions,
/// solve the corresponding linear sub-problem, then refine all four.
fn beta_candidates4(l: &DMatrix<f64>, rho: &[f64]) -> Vec<[f64; 4]> {
    let mut out = Vec::new();
    // [b11, b12, b13, b14]
    if let Some(b) = solve_columns(l, rho, &[0, 1, 3, 6]) {
        let b1 = b[0].abs().sqrt();
        if b1 > 0.0 {
            let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
            out.push([b1, sign * b[1] / b1, sign * b[2] / b1, sign * b[3] / b1]);
        }
    }
    // [b11, b12, b22]
    if let Some(b) = solve_columns(l, rho, &[0, 1, 2]) {
        let mut b1 = b[0].abs().sqrt();
        let b2 = if b[0] * b[2] > 0.0 { b[2].abs().sqrt() } else { 0.0 };
        if b[1] < 0.0 {
            b1 = -b1;
        }
        out.push([b1, b2, 0.0, 0.0]);
    }
    // [b11, b12, b22, b13, b23]
    if let Some(b) = solve_columns(l, rho, &[0, 1, 2, 3, 4]) {
        let mut b1 = b[0].abs().sqrt();
        let b2 = if b[0] * b[2] > 0.0 { b[2].abs().sqrt() } else { 0.0 };
        if b[1] < 0.0 {
            b1 = -b1;
        }
        let b3 = if b1 != 0.0 { b[3] / b1 } else { 0.0 };
        out.push([b1, b2, b3, 0.0]);
    }
    out
}

/// Seed candidates for the planar (three-control-point) case.
fn beta_candidates3(
    l: &DMatrix<f64>,
    rho: &[f64],
    diffs: &[Vec<Vector3<f64>>],
) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    // Scale-only fit along the dominant null direction.
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, d) in diffs[0].iter().enumerate() {
        num += d.norm() * rho[p].sqrt();
        den += d.norm_squared();
    }
    if den > 0.0 {
        out.push([num / den, 0.0]);
    }
    // [b11, b12, b22]
    if let Some(b) = solve_columns(l, rho, &[0, 1, 2]) {
        let mut b1 = b[0].abs().sqrt();
        let b2 = if b[0] * b[2] > 0.0 { b[2].abs().sqrt() } else { 0.0 };
        if b[1] < 0.0 {
            b1 = -b1;
        }
        out.push([b1, b2]);
    }
    out
}

fn combine(vs: &[DVector<f64>], betas: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(vs[0].len());
    for (v, &b) in vs.iter().zip(betas) {
        x += v * b;
    }
    x
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / theta.powi(2))
}

fn orthonormalize(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let mut v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
        r = u * v_t;
    }
    Some(r)
}

/// Gauss-Newton pose polish on reprojection error. Points behind the
/// camera do not contribute; the input pose is returned unchanged when
/// fewer than three points are usable or a step fails.
pub fn refine_pose(
    pose: &Se3Pose,
    corrs: &[Correspondence2D3D],
    intrinsics: &CameraIntrinsics,
    iterations: usize,
) -> Se3Pose {
    let mut rotation = pose.rotation;
    let mut translation = pose.translation;
    for _ in 0..iterations {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut usable = 0usize;
        for corr in corrs {
            let pc = rotation * corr.point3d + translation;
            if pc.z <= 1e-9 {
                continue;
            }
            usable += 1;
            let inv_z = 1.0 / pc.z;
            let u = intrinsics.fx * pc.x * inv_z + intrinsics.cx;
            let v = intrinsics.fy * pc.y * inv_z + intrinsics.cy;
            let res = Vector2::new(u - corr.point2d.x, v - corr.point2d.y);
            let d_uv = nalgebra::Matrix2x3::new(
                intrinsics.fx * inv_z,
                0.0,
                -intrinsics.fx * pc.x * inv_z * inv_z,
                0.0,
                intrinsics.fy * inv_z,
                -intrinsics.fy * pc.y * inv_z * inv_z,
            );
            let mut jac = nalgebra::Matrix2x6::zeros();
            jac.fixed_view_mut::<2, 3>(0, 0)
                .copy_from(&(d_uv * (-skew(&pc))));
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_uv);
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * res;
        }
        if usable < 3 {
            return *pose;
        }
        let delta = match jtj.cholesky() {
            Some(ch) => ch.solve(&(-jtr)),
            None => break,
        };
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let shift = Vector3::new(delta[3], delta[4], delta[5]);
        let rot = rodrigues(&omega);
        translation = rot * translation + shift;
        rotation = match orthonormalize(&(rot * rotation)) {
            Some(r) => r,
            None => break,
        };
        if delta.norm() < 1e-14 {
            break;
        }
    }
    Se3Pose::new(rotation, translation).unwrap_or(*pose)
}

/// Camera pose from at least four 2D-3D correspondences, assumed
/// outlier-free. Planar point sets take a three-control-point branch;
/// collinear sets are rejected.
pub fn epnp(
    corrs: &[Correspondence2D3D],
    intrinsics: &CameraIntrinsics,
) -> Result<Se3Pose, PnpError> {
    if corrs.len() < 4 {
        return Err(PnpError::NotEnoughPoints {
            needed: 4,
            got: corrs.len(),
        });
    }
    let points: Vec<Vector3<f64>> = corrs.iter().map(|c| c.point3d).collect();
    let (controls, planar) = control_points(&points)?;
    let alphas = barycentric(&points, &controls);
    let system = build_system(corrs, &alphas, intrinsics);
    let pairs: &[(usize, usize)] = if planar { &PAIRS3 } else { &PAIRS4 };
    let rho = control_distances_sq(&controls, pairs);
    let vs = null_vectors(&system, if planar { 2 } else { 4 });
    let diffs: Vec<Vec<Vector3<f64>>> = vs.iter().map(|v| pair_diffs(v, pairs)).collect();
    let l = distance_rows(&diffs, pairs.len());

    let mut best: Option<(Se3Pose, f64)> = None;
    let mut consider = |betas: &[f64]| {
        let x = combine(&vs, betas);
        if let Some((pose, err)) = pose_from_candidate(&x, &alphas, corrs, intrinsics) {
            if best.as_ref().is_none_or(|(_, e)| err < *e) {
                best = Some((pose, err));
            }
        }
    };
    if planar {
        for mut betas in beta_candidates3(&l, &rho, &diffs) {
            refine_betas(&l, &rho, &mut betas);
            consider(&betas);
        }
    } else {
        for mut betas in beta_candidates4(&l, &rho) {
            refine_betas(&l, &rho, &mut betas);
            consider(&betas);
        }
    }
    let (pose, _) = best.ok_or(PnpError::DegenerateGeometry("no valid pose candidate"))?;
    Ok(refine_pose(&pose, corrs, intrinsics, 10))
}

/// Robust pose estimation: minimal four-point samples, inlier scoring
/// at `threshold_px`, adaptive iteration count from the running inlier
/// ratio, then a final refit on the winning inlier set. The returned
/// inlier list is always consistent with the returned pose.
pub fn ransac_pnp(
    corrs: &[Correspondence2D3D],
    intrinsics: &CameraIntrinsics,
    config: &RansacConfig,
    seed: u64,
) -> Result<PoseEstimate, PnpError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PnpError::NotEnoughPoints { needed: 4, got: n });
    }
    let mut rng = seeding::stream_rng(seed, "ransac", &[]);
    let inliers_of = |pose: &Se3Pose| -> Vec<usize> {
        (0..n)
            .filter(|&i| reprojection_error(pose, intrinsics, &corrs[i]) < config.threshold_px)
            .collect()
    };

    let mut best: Option<(Se3Pose, Vec<usize>, f64)> = None;
    let mut needed = config.max_iters;
    let mut used = 0usize;
    while used < needed {
        used += 1;
        let picks = rand::seq::index::sample(&mut rng, n, 4);
        let sample: Vec<Correspondence2D3D> = picks.iter().map(|i| corrs[i]).collect();
        let Ok(pose) = epnp(&sample, intrinsics) else {
            continue;
        };
        let inliers = inliers_of(&pose);
        let err: f64 = inliers
            .iter()
            .map(|&i| reprojection_error(&pose, intrinsics, &corrs[i]).powi(2))
            .sum();
        let better = match &best {
            None => !inliers.is_empty(),
            Some((_, bi, be)) => {
                inliers.len() > bi.len() || (inliers.len() == bi.len() && err < *be)
            }
        };
        if better {
            let ratio = inliers.len() as f64 / n as f64;
            let miss = (1.0 - ratio.powi(4)).clamp(1e-12, 1.0);
            let adaptive = if miss < 1.0 {
                ((1.0 - config.confidence).ln() / miss.ln()).ceil() as usize
            } else {
                config.max_iters
            };
            needed = adaptive.clamp(1, config.max_iters);
            best = Some((pose, inliers, err));
        }
    }

    let (pose, inliers, _) = best.ok_or(PnpError::NoConsensus { best_inliers: 0 })?;
    if inliers.len() < config.min_inliers.max(4) {
        return Err(PnpError::NoConsensus {
            best_inliers: inliers.len(),
        });
    }
    let subset: Vec<Correspondence2D3D> = inliers.iter().map(|&i| corrs[i]).collect();
    if let Ok(refit) = epnp(&subset, intrinsics) {
        let refit_inliers = inliers_of(&refit);
        if refit_inliers.len() >= inliers.len() {
            return Ok(PoseEstimate {
                pose: refit,
                inliers: refit_inliers,
                iterations: used,
            });
        }
    }
    Ok(PoseEstimate {
        pose,
        inliers,
        iterations: used,
    })
}
