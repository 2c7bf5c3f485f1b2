//! Core camera geometry: SE(3) poses, pinhole intrinsics, rays.
//!
//! Conventions, used consistently everywhere in the crate:
//! - Extrinsics map world to camera: `x_cam = R * x_world + t`.
//! - The camera looks down +z; image x is right, image y is down; pixel
//!   (0, 0) is the top-left corner of the image.
//! - Integer pixel (i, j) is sampled at its center, continuous image
//!   coordinate (i + 0.5, j + 0.5). [`pixel_to_ray`] takes pixel-index
//!   coordinates and casts the ray through the center; [`project`] returns
//!   continuous image coordinates. Stored keypoint pixels are continuous
//!   center coordinates, so `project` of a keypoint's 3D point reproduces
//!   its stored pixel exactly and marching along `pixel_to_ray(p)` projects
//!   to `p + 0.5`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("pixel ({x}, {y}) outside image bounds {width}x{height}")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("rotation matrix is not orthonormal with det +1 (deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
    #[error("invalid intrinsics: {reason}")]
    BadIntrinsics { reason: String },
    #[error("invalid ray: {reason}")]
    BadRay { reason: String },
    #[error("look-at direction is degenerate (zero length or parallel to up)")]
    DegenerateLookAt,
}

/// Rigid world-to-camera transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Tolerance for the rotation-matrix orthonormality check.
const ROTATION_TOL: f64 = 1e-9;

impl Se3Pose {
    /// Builds a pose, verifying `R * R^T = I` and `det R = 1` within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOL {
            return Err(GeometryError::NotARotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with `up` fixing the roll so
    /// that image y points away from `up` (world up appears upward).
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        let fnorm = forward.norm();
        if fnorm < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let z = forward / fnorm;
        // Image y is "down": project -up onto the plane orthogonal to z.
        let down = -up + z * up.dot(&z);
        let dnorm = down.norm();
        if dnorm < 1e-9 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let y = down / dnorm;
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            rotation,
            translation: -rotation * eye,
        })
    }

    /// Composition: `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3Pose {
        let rt = self.rotation.transpose();
        Se3Pose {
            rotation: rt,
            translation: -rt * self.translation,
        }
    }

    /// World coordinates of the camera center, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Maps a world point into the camera frame.
    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }
}

/// Max absolute deviation of `R` from a proper rotation.
fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r * r.transpose() - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

/// Pinhole camera intrinsics. Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::BadIntrinsics {
                reason: format!("focal lengths must be positive, got fx={fx}, fy={fy}"),
            });
        }
        if !(0.0..f64::from(width)).contains(&cx) || !(0.0..f64::from(height)).contains(&cy) {
            return Err(GeometryError::BadIntrinsics {
                reason: format!(
                    "principal point ({cx}, {cy}) outside image {width}x{height}"
                ),
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// A ray `r(t) = origin + t * direction` with a sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Builds a ray, verifying the direction is unit-norm within 1e-9 and
    /// `0 <= t_near < t_far`.
    pub fn new(
        origin: Vector3<f64>,
        direction: Vector3<f64>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self, GeometryError> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::BadRay {
                reason: format!("direction norm {} is not 1", direction.norm()),
            });
        }
        if !(0.0 <= t_near && t_near < t_far) {
            return Err(GeometryError::BadRay {
                reason: format!("bad interval [{t_near}, {t_far}]"),
            });
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Back-projects a pixel into a world-space ray through the pixel center.
///
/// `pixel` is in pixel-index coordinates: the ray passes through continuous
/// image coordinate `pixel + 0.5` per the center-sampling convention.
pub fn pixel_to_ray(
    pixel: Vector2<f64>,
    intrinsics: &CameraIntrinsics,
    pose: &Se3Pose,
    bounds: (f64, f64),
) -> Result<Ray, GeometryError> {
    if !(0.0..f64::from(intrinsics.width)).contains(&pixel.x)
        || !(0.0..f64::from(intrinsics.height)).contains(&pixel.y)
    {
        return Err(GeometryError::PixelOutOfBounds {
            x: pixel.x,
            y: pixel.y,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    let dir_cam = Vector3::new(
        (pixel.x + 0.5 - intrinsics.cx) / intrinsics.fx,
        (pixel.y + 0.5 - intrinsics.cy) / intrinsics.fy,
        1.0,
    );
    let rt = pose.rotation.transpose();
    let dir_world = (rt * dir_cam).normalize();
    Ray::new(pose.camera_center(), dir_world, bounds.0, bounds.1)
}

/// Projects a world point to continuous image coordinates.
///
/// Returns `None` when the point is behind the camera (camera-frame
/// z <= 1e-9). No bounds check: off-image projections are returned as-is.
pub fn project(
    pose: &Se3Pose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
) -> Option<Vector2<f64>> {
    let cam = pose.transform(point);
    if cam.z <= 1e-9 {
        return None;
    }
    Some(Vector2::new(
        intrinsics.fx * cam.x / cam.z + intrinsics.cx,
        intrinsics.fy * cam.y / cam.z + intrinsics.cy,
    ))
}

/// Pose error as `(translation, rotation in degrees)`.
///
/// Translation compares camera centers; rotation is the geodesic angle
/// `arccos((trace(R_est^T R_gt) - 1) / 2)` with the argument clamped.
pub fn pose_error(estimate: &Se3Pose, ground_truth: &Se3Pose) -> (f64, f64) {
    let t_err = (estimate.camera_center() - ground_truth.camera_center()).norm();
    let cos = ((estimate.rotation.transpose() * ground_truth.rotation).trace() - 1.0) / 2.0;
    let r_err = cos.clamp(-1.0, 1.0).acos().to_degrees();
    (t_err, r_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(128.0, 128.0, 64.0, 64.0, 128, 128).unwrap()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let ray = pixel_to_ray(
            Vector2::new(63.5, 63.5),
            &intr(),
            &Se3Pose::identity(),
            (0.1, 10.0),
        )
        .unwrap();
        assert_relative_eq!(ray.direction, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn ray_origin_is_camera_center() {
        let pose = Se3Pose::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap();
        let ray = pixel_to_ray(Vector2::new(10.0, 20.0), &intr(), &pose, (0.1, 10.0)).unwrap();
        assert_relative_eq!(ray.origin, pose.camera_center(), epsilon = 1e-12);
        assert_relative_eq!(
            ray.origin,
            -(pose.rotation.transpose() * pose.translation),
            epsilon = 1e-12
        );
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let err = pixel_to_ray(
            Vector2::new(128.0, 5.0),
            &intr(),
            &Se3Pose::identity(),
            (0.1, 10.0),
        );
        assert!(matches!(err, Err(GeometryError::PixelOutOfBounds { .. })));
    }

    #[test]
    fn project_optical_axis_point_hits_principal_point() {
        let px = project(&Se3Pose::identity(), &intr(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vector2::new(64.0, 64.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_point_is_flagged() {
        assert!(project(&Se3Pose::identity(), &intr(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project(&Se3Pose::identity(), &intr(), &Vector3::zeros()).is_none());
    }

    #[test]
    fn march_and_reproject_lands_on_pixel_center() {
        let pose = Se3Pose::look_at(
            Vector3::new(2.0, -1.0, 1.5),
            Vector3::new(0.1, 0.2, 0.0),
            Vector3::z(),
        )
        .unwrap();
        let pixel = Vector2::new(17.0, 93.0);
        let ray = pixel_to_ray(pixel, &intr(), &pose, (0.1, 10.0)).unwrap();
        let reproj = project(&pose, &intr(), &ray.point_at(2.0)).unwrap();
        assert_relative_eq!(reproj, pixel + Vector2::new(0.5, 0.5), epsilon = 1e-6);
    }

    #[test]
    fn pose_error_identity_and_half_turn() {
        let pose = Se3Pose::look_at(Vector3::new(0.0, 3.0, 1.0), Vector3::zeros(), Vector3::z())
            .unwrap();
        assert_eq!(pose_error(&pose, &pose), (0.0, 0.0));

        // Half turn about the camera z axis, same center.
        let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        let center = pose.camera_center();
        let rot = flip * pose.rotation;
        let turned = Se3Pose::new(rot, -rot * center).unwrap();
        let (t, r) = pose_error(&turned, &pose);
        assert_relative_eq!(t, 0.0, epsilon = 1e-9);
        assert_relative_eq!(r, 180.0, epsilon = 1e-9);
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.1));
        assert!(matches!(
            Se3Pose::new(bad, Vector3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        // det = -1 (reflection) must be rejected even though R R^T = I.
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Se3Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Vector3::new(3.0, -2.0, 1.0);
        let target = Vector3::new(0.5, 0.5, 0.0);
        let pose = Se3Pose::look_at(eye, target, Vector3::z()).unwrap();
        let cam = pose.transform(&target);
        // Target sits on the optical axis, in front of the camera.
        assert_relative_eq!(cam.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(cam.y, 0.0, epsilon = 1e-12);
        assert!(cam.z > 0.0);
        assert_relative_eq!(pose.camera_center(), eye, epsilon = 1e-12);
    }
}
