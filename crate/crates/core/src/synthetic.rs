//! Synthetic ground truth: procedural scenes, an analytic ray tracer, and
//! camera trajectories.
//!
//! The renderer intersects rays with textured spheres and axis-aligned
//! boxes in closed form, so images and depth maps are exact. Map building
//! back-projects keypoints through the returned depth, which makes the
//! geometric map noise-free and lets end-to-end tests attribute any error
//! to the pipeline itself rather than to reconstruction.
//!
//! The world is z-up. Generated scenes sit on a table slab around the
//! origin; cameras orbit the scene center looking inward.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_to_ray, CameraIntrinsics, Se3Pose};
use crate::img::{DepthMap, Image};
use crate::seeding;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("trajectory spec invalid: {0}")]
    BadSpec(String),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Procedural solid texture, sampled at the world-space hit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    /// 3D checkerboard with cell size `scale`.
    Checker {
        scale: f64,
        color_a: [f32; 3],
        color_b: [f32; 3],
    },
    /// Posterized trilinear value noise: smooth noise at cell size `scale`
    /// quantized into `levels` bands, which produces sharp iso-contours
    /// (and therefore corners) on otherwise smooth surfaces.
    Noise {
        scale: f64,
        seed: u64,
        levels: u32,
        color_a: [f32; 3],
        color_b: [f32; 3],
    },
}

impl Texture {
    fn sample(&self, p: &Vector3<f64>) -> [f32; 3] {
        match self {
            Texture::Checker {
                scale,
                color_a,
                color_b,
            } => {
                let parity = (p.x / scale).floor() + (p.y / scale).floor() + (p.z / scale).floor();
                if (parity as i64).rem_euclid(2) == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::Noise {
                scale,
                seed,
                levels,
                color_a,
                color_b,
            } => {
                let v = value_noise(&(p / *scale), *seed);
                let q = ((v * f64::from(*levels)).floor() / f64::from(*levels)) as f32;
                [
                    color_a[0] + (color_b[0] - color_a[0]) * q,
                    color_a[1] + (color_b[1] - color_a[1]) * q,
                    color_a[2] + (color_b[2] - color_a[2]) * q,
                ]
            }
        }
    }
}

/// Hash of an integer lattice point into [0, 1).
fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = seeding::mix(seed, &[ix as u64, iy as u64, iz as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinearly interpolated lattice noise in [0, 1).
fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let base = p.map(|c| c.floor());
    let frac = p - base;
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for corner in 0..8u8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let v = lattice_value(ix + i64::from(dx), iy + i64::from(dy), iz + i64::from(dz), seed);
        let wx = if dx == 1 { frac.x } else { 1.0 - frac.x };
        let wy = if dy == 1 { frac.y } else { 1.0 - frac.y };
        let wz = if dz == 1 { frac.z } else { 1.0 - frac.z };
        acc += v * wx * wy * wz;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        texture: Texture,
    },
    /// Axis-aligned box given by center and half extents.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        texture: Texture,
    },
}

impl Primitive {
    /// Farthest distance from the origin to any point of the primitive.
    fn reach(&self) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => center.norm() + radius,
            Primitive::Box {
                center,
                half_extents,
                ..
            } => center.norm() + half_extents.norm(),
        }
    }

    /// Nearest intersection parameter t > eps along `origin + t * dir`,
    /// with the outward surface normal at the hit.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sqrt_disc = disc.sqrt();
                let t = if -b - sqrt_disc > EPS {
                    -b - sqrt_disc
                } else if -b + sqrt_disc > EPS {
                    -b + sqrt_disc
                } else {
                    return None;
                };
                let normal = (origin + dir * t - center) / *radius;
                Some((t, normal))
            }
            Primitive::Box {
                center,
                half_extents,
                ..
            } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                let mut enter_axis = 0usize;
                for axis in 0..3 {
                    let o = origin[axis] - center[axis];
                    let h = half_extents[axis];
                    let d = dir[axis];
                    if d.abs() < 1e-15 {
                        if o.abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let mut t0 = (-h - o) / d;
                    let mut t1 = (h - o) / d;
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > t_enter {
                        t_enter = t0;
                        enter_axis = axis;
                    }
                    t_exit = t_exit.min(t1);
                }
                if t_enter > t_exit || t_enter <= EPS {
                    return None;
                }
                let hit = origin + dir * t_enter;
                let mut normal = Vector3::zeros();
                normal[enter_axis] = (hit[enter_axis] - center[enter_axis]).signum();
                Some((t_enter, normal))
            }
        }
    }
}

/// A static scene: primitives, background color, lighting, and the
/// diameter of the bounding sphere (`scene_scale`) that all
/// scale-dependent thresholds are expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f32; 3],
    pub scene_scale: f64,
    /// Direction light travels (points roughly downward).
    pub light_direction: Vector3<f64>,
    pub ambient: f32,
}

impl SyntheticScene {
    /// Diameter of a bounding sphere centered at the origin.
    pub fn compute_scale(primitives: &[Primitive]) -> f64 {
        2.0 * primitives.iter().map(Primitive::reach).fold(0.0, f64::max)
    }

    /// Nearest hit along a world-space ray.
    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = prim.intersect(origin, dir) {
                if best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, i, normal));
                }
            }
        }
        best
    }

    fn shade(&self, primitive: usize, hit: &Vector3<f64>, normal: &Vector3<f64>) -> [f32; 3] {
        let texture = match &self.primitives[primitive] {
            Primitive::Sphere { texture, .. } => texture,
            Primitive::Box { texture, .. } => texture,
        };
        let albedo = texture.sample(hit);
        let diffuse = normal.dot(&-self.light_direction).max(0.0) as f32;
        let lit = self.ambient + (1.0 - self.ambient) * diffuse;
        [albedo[0] * lit, albedo[1] * lit, albedo[2] * lit]
    }
}

/// Renders the exact image and camera-frame depth for a pose.
///
/// Depth is the camera-frame z of the nearest hit, `f32::INFINITY` where
/// the ray escapes to the background.
pub fn oracle_render(
    scene: &SyntheticScene,
    pose: &Se3Pose,
    intrinsics: &CameraIntrinsics,
) -> (Image, DepthMap) {
    let mut image = Image::new(intrinsics.width, intrinsics.height);
    let mut depth = DepthMap::new(intrinsics.width, intrinsics.height);
    let origin = pose.camera_center();
    for y in 0..intrinsics.height {
        for x in 0..intrinsics.width {
            // Bounds are irrelevant for tracing; pixel_to_ray only needs a
            // valid interval.
            let ray = pixel_to_ray(
                Vector2::new(f64::from(x), f64::from(y)),
                intrinsics,
                pose,
                (0.0, 1.0),
            )
            .expect("loop stays in bounds");
            match scene.trace(&origin, &ray.direction) {
                Some((t, prim, normal)) => {
                    let hit = origin + ray.direction * t;
                    image.set(x, y, scene.shade(prim, &hit, &normal));
                    depth.set(x, y, pose.transform(&hit).z as f32);
                }
                None => image.set(x, y, scene.background),
            }
        }
    }
    (image, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Complexity {
    Small,
    Medium,
}

/// Deterministically generates a tabletop scene.
///
/// A checkered table slab plus several spheres and boxes resting on it,
/// textured with fine checkerboards and posterized noise so that rendered
/// views carry dense corner features (at least 200 detectable keypoints at
/// 128x128). The background is exact black, which matches what an empty
/// radiance field composites to.
pub fn generate_scene(seed: u64, complexity: Complexity) -> SyntheticScene {
    let mut rng = seeding::stream_rng(seed, "scene-gen", &[]);
    let n_objects = match complexity {
        Complexity::Small => rng.random_range(4..=7usize),
        Complexity::Medium => rng.random_range(8..=12usize),
    };

    let palette: [[f32; 3]; 6] = [
        [0.95, 0.35, 0.25],
        [0.25, 0.55, 0.95],
        [0.35, 0.85, 0.40],
        [0.95, 0.80, 0.25],
        [0.80, 0.35, 0.90],
        [0.30, 0.85, 0.85],
    ];

    let mut primitives = Vec::new();
    primitives.push(Primitive::Box {
        center: Vector3::new(0.0, 0.0, -0.06),
        half_extents: Vector3::new(1.1, 1.1, 0.06),
        texture: Texture::Checker {
            scale: 0.22,
            color_a: [0.85, 0.82, 0.75],
            color_b: [0.35, 0.30, 0.28],
        },
    });

    // Rejection-sample object positions so footprints stay disjoint.
    let mut placed: Vec<(Vector2<f64>, f64)> = Vec::new();
    for i in 0..n_objects {
        let mut center_xy = Vector2::new(0.0, 0.0);
        let mut footprint = 0.0;
        let mut size = 0.0;
        let mut ok = false;
        for _ in 0..64 {
            size = rng.random_range(0.14..0.3);
            let r = rng.random_range(0.0..0.78f64);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            center_xy = Vector2::new(r * phi.cos(), r * phi.sin());
            footprint = size * 1.45;
            if placed
                .iter()
                .all(|(c, f)| (c - center_xy).norm() > f + footprint)
            {
                ok = true;
                break;
            }
        }
        if !ok {
            continue;
        }
        placed.push((center_xy, footprint));

        let color_a = palette[rng.random_range(0..palette.len())];
        let color_b = [
            0.15 + 0.1 * rng.random_range(0.0..1.0f32),
            0.15 + 0.1 * rng.random_range(0.0..1.0f32),
            0.15 + 0.1 * rng.random_range(0.0..1.0f32),
        ];
        let texture = if i % 3 == 2 {
            Texture::Noise {
                scale: rng.random_range(0.08..0.16),
                seed: rng.random_range(0..u64::MAX),
                levels: 5,
                color_a,
                color_b,
            }
        } else {
            Texture::Checker {
                scale: rng.random_range(0.055..0.12),
                color_a,
                color_b,
            }
        };

        if rng.random_range(0.0..1.0f64) < 0.5 {
            primitives.push(Primitive::Sphere {
                center: Vector3::new(center_xy.x, center_xy.y, size),
                radius: size,
                texture,
            });
        } else {
            let h = Vector3::new(
                size * rng.random_range(0.7..1.2),
                size * rng.random_range(0.7..1.2),
                size * rng.random_range(0.8..1.6),
            );
            primitives.push(Primitive::Box {
                center: Vector3::new(center_xy.x, center_xy.y, h.z),
                half_extents: h,
                texture,
            });
        }
    }

    let scene_scale = SyntheticScene::compute_scale(&primitives);
    SyntheticScene {
        primitives,
        background: [0.0, 0.0, 0.0],
        scene_scale,
        light_direction: Vector3::new(0.35, -0.25, -0.9).normalize(),
        ambient: 0.3,
    }
}

/// Camera trajectory parameters. Distances are absolute scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub n_reference: usize,
    pub n_query: usize,
    /// Min/max orbit radius from the scene center.
    pub orbit_radius: (f64, f64),
    /// Max offset of the look-at target from the scene center.
    pub look_at_jitter: f64,
    /// Query perturbation: max camera-center offset (scene units) and max
    /// rotation offset (degrees) applied to a randomly chosen reference.
    pub query_perturbation: (f64, f64),
    pub seed: u64,
}

impl TrajectorySpec {
    fn validate(&self) -> Result<(), SyntheticError> {
        if self.n_reference < 2 {
            return Err(SyntheticError::BadSpec(format!(
                "need at least 2 reference poses, got {}",
                self.n_reference
            )));
        }
        if !(self.orbit_radius.0 > 0.0 && self.orbit_radius.1 >= self.orbit_radius.0) {
            return Err(SyntheticError::BadSpec(format!(
                "bad orbit radius range {:?}",
                self.orbit_radius
            )));
        }
        if self.look_at_jitter < 0.0
            || self.query_perturbation.0 < 0.0
            || self.query_perturbation.1 < 0.0
        {
            return Err(SyntheticError::BadSpec(
                "jitter and perturbation must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform point in the unit ball (rejection sampling).
fn unit_ball(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

/// Uniform direction on the unit sphere.
fn unit_sphere(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = unit_ball(rng);
        if v.norm() > 1e-3 {
            return v / v.norm();
        }
    }
}

/// Rotates `pose`'s orientation by a random angle up to `max_deg` and
/// offsets its camera center by up to `max_t`, preserving the
/// world-to-camera convention. Zero bounds return the pose unchanged.
pub fn perturb_pose(pose: &Se3Pose, max_t: f64, max_deg: f64, rng: &mut impl Rng) -> Se3Pose {
    let axis = unit_sphere(rng);
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    let offset = unit_ball(rng) * max_t;
    if max_t == 0.0 && max_deg == 0.0 {
        return *pose;
    }
    let delta = nalgebra::Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(axis),
        angle,
    );
    let rotation = delta.matrix() * pose.rotation;
    let center = pose.camera_center() + offset;
    Se3Pose {
        rotation,
        translation: -rotation * center,
    }
}

/// Generates reference poses on a jittered orbit around the scene center
/// and query poses as perturbed copies of random references.
pub fn generate_trajectories(
    scene: &SyntheticScene,
    spec: &TrajectorySpec,
) -> Result<(Vec<Se3Pose>, Vec<Se3Pose>), SyntheticError> {
    spec.validate()?;
    if spec.orbit_radius.0 <= 0.5 * scene.scene_scale {
        return Err(SyntheticError::BadSpec(format!(
            "orbit radius {} must stay outside the scene bounding sphere (radius {})",
            spec.orbit_radius.0,
            0.5 * scene.scene_scale
        )));
    }
    let mut rng = seeding::stream_rng(spec.seed, "trajectory", &[]);
    let mut references = Vec::with_capacity(spec.n_reference);
    // Elevation band keeps cameras well above the table plane and away
    // from the look-at degeneracy at the zenith.
    let elevation = (25f64.to_radians(), 45f64.to_radians());
    for i in 0..spec.n_reference {
        let spacing = std::f64::consts::TAU / spec.n_reference as f64;
        let azimuth = spacing * i as f64 + rng.random_range(-0.2..0.2) * spacing;
        let radius = rng.random_range(spec.orbit_radius.0..=spec.orbit_radius.1);
        let el = rng.random_range(elevation.0..elevation.1);
        let eye = Vector3::new(
            radius * el.cos() * azimuth.cos(),
            radius * el.cos() * azimuth.sin(),
            radius * el.sin(),
        );
        let target = if spec.look_at_jitter > 0.0 {
            unit_ball(&mut rng) * spec.look_at_jitter
        } else {
            // Keep the draw so the rng stream does not depend on jitter.
            let _ = unit_ball(&mut rng);
            Vector3::zeros()
        };
        references.push(Se3Pose::look_at(eye, target, Vector3::z())?);
    }

    let mut queries = Vec::with_capacity(spec.n_query);
    for _ in 0..spec.n_query {
        let idx = rng.random_range(0..references.len());
        queries.push(perturb_pose(
            &references[idx],
            spec.query_perturbation.0,
            spec.query_perturbation.1,
            &mut rng,
        ));
    }
    Ok((references, queries))
}

/// Everything the pipeline needs to know about a generated scene: the
/// scene itself, shared intrinsics, and both trajectories. Serialized as
/// the `scene.json` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub scene: SyntheticScene,
    pub intrinsics: CameraIntrinsics,
    pub reference_poses: Vec<Se3Pose>,
    pub query_poses: Vec<Se3Pose>,
    pub trajectory: TrajectorySpec,
    pub master_seed: u64,
}

impl SceneBundle {
    /// Desk-scale bundle: 128x128 views, 20 references, 20 queries.
    pub fn generate(seed: u64, complexity: Complexity) -> Self {
        let scene = generate_scene(seed, complexity);
        let trajectory = TrajectorySpec {
            n_reference: 20,
            n_query: 20,
            orbit_radius: (1.05 * scene.scene_scale, 1.25 * scene.scene_scale),
            look_at_jitter: 0.02 * scene.scene_scale,
            query_perturbation: (0.03 * scene.scene_scale, 3.0),
            seed: seeding::mix(seed, &[seeding::tag("trajectory-seed")]),
        };
        Self::generate_with(seed, complexity, trajectory)
    }

    pub fn generate_with(seed: u64, complexity: Complexity, trajectory: TrajectorySpec) -> Self {
        let scene = generate_scene(seed, complexity);
        let intrinsics = CameraIntrinsics::new(128.0, 128.0, 64.0, 64.0, 128, 128)
            .expect("static intrinsics are valid");
        let (reference_poses, query_poses) =
            generate_trajectories(&scene, &trajectory).expect("default trajectory spec is valid");
        SceneBundle {
            scene,
            intrinsics,
            reference_poses,
            query_poses,
            trajectory,
            master_seed: seed,
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), std::io::Error> {
        let text = serde_json::to_string_pretty(self).expect("bundle serializes");
        std::fs::write(path, text)
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_scene() {
        let a = generate_scene(7, Complexity::Small);
        let b = generate_scene(7, Complexity::Small);
        assert_eq!(a, b);
        assert!(a.scene_scale > 0.0);
    }

    #[test]
    fn small_scene_has_bounded_primitive_count() {
        for seed in 0..5 {
            let scene = generate_scene(seed, Complexity::Small);
            assert!(scene.primitives.len() >= 2);
            assert!(scene.primitives.len() <= 8);
        }
    }

    #[test]
    fn camera_facing_away_sees_background_only() {
        let scene = generate_scene(3, Complexity::Small);
        let intr = CameraIntrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap();
        // Camera outside the scene, looking directly away from the origin.
        let eye = Vector3::new(0.0, 3.0 * scene.scene_scale, 0.5);
        let away = eye + (eye - Vector3::zeros());
        let pose = Se3Pose::look_at(eye, away, Vector3::z()).unwrap();
        let (image, depth) = oracle_render(&scene, &pose, &intr);
        assert_eq!(depth.foreground_fraction(), 0.0);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(image.get(x, y), scene.background);
            }
        }
    }

    #[test]
    fn sphere_depth_through_principal_point() {
        let scene = SyntheticScene {
            primitives: vec![Primitive::Sphere {
                center: Vector3::new(0.0, 0.0, 5.0),
                radius: 1.0,
                texture: Texture::Checker {
                    scale: 1.0,
                    color_a: [1.0; 3],
                    color_b: [0.0; 3],
                },
            }],
            background: [0.0; 3],
            scene_scale: 12.0,
            light_direction: Vector3::new(0.0, 0.0, -1.0),
            ambient: 0.3,
        };
        let intr = CameraIntrinsics::new(64.0, 64.0, 31.5, 31.5, 64, 64).unwrap();
        let (_, depth) = oracle_render(&scene, &Se3Pose::identity(), &intr);
        // Pixel index (31, 31) samples continuous coordinate (31.5, 31.5):
        // exactly the principal point, so the ray runs along the optical
        // axis and hits the front of the sphere at depth 4.
        assert!((depth.get(31, 31) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn render_is_deterministic() {
        let scene = generate_scene(11, Complexity::Small);
        let intr = CameraIntrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap();
        let pose = Se3Pose::look_at(
            Vector3::new(scene.scene_scale, 0.3, 0.8),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap();
        let (img_a, depth_a) = oracle_render(&scene, &pose, &intr);
        let (img_b, depth_b) = oracle_render(&scene, &pose, &intr);
        assert_eq!(img_a, img_b);
        assert_eq!(depth_a, depth_b);
    }

    #[test]
    fn zero_perturbation_queries_equal_references() {
        let scene = generate_scene(5, Complexity::Small);
        let spec = TrajectorySpec {
            n_reference: 6,
            n_query: 4,
            orbit_radius: (1.1 * scene.scene_scale, 1.2 * scene.scene_scale),
            look_at_jitter: 0.0,
            query_perturbation: (0.0, 0.0),
            seed: 9,
        };
        let (refs, queries) = generate_trajectories(&scene, &spec).unwrap();
        assert_eq!(refs.len(), 6);
        assert_eq!(queries.len(), 4);
        for q in &queries {
            assert!(refs.iter().any(|r| r == q), "query must be an exact copy");
        }
    }

    #[test]
    fn trajectories_are_deterministic_and_sized() {
        let scene = generate_scene(5, Complexity::Small);
        let spec = TrajectorySpec {
            n_reference: 20,
            n_query: 7,
            orbit_radius: (1.05 * scene.scene_scale, 1.25 * scene.scene_scale),
            look_at_jitter: 0.05,
            query_perturbation: (0.1, 3.0),
            seed: 1,
        };
        let (r1, q1) = generate_trajectories(&scene, &spec).unwrap();
        let (r2, q2) = generate_trajectories(&scene, &spec).unwrap();
        assert_eq!(r1.len(), 20);
        assert_eq!(r1, r2);
        assert_eq!(q1, q2);
    }
}
