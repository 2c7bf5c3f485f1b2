//! Desk-scale visual relocalization with a hybrid map.
//!
//! The map has two halves. The explicit half ([`egm`]) stores sparse 3D
//! points, per-reference-image keypoints linked to those points, and one
//! global descriptor per image; it deliberately stores no local descriptors.
//! The implicit half ([`ilm`]) is a set of small neural radiance fields, one
//! per camera-pose cluster ([`division`]), that can re-render local
//! appearance on demand.
//!
//! Localization ([`pipeline`]) retrieves candidate reference images by
//! global descriptor, renders small patches around each candidate's
//! keypoints with the cluster's radiance field ([`sparse_render`]), matches
//! them against query patches ([`features`]), lifts the 2D-2D matches to
//! 2D-3D correspondences through the keypoint-to-point links, and recovers
//! the absolute pose with EPnP inside RANSAC ([`pnp`]).
//!
//! Everything is deterministic: a single master seed pins scene generation,
//! training, sampling, and RANSAC. The [`synthetic`] module provides an
//! analytic ray-traced scene that serves as ground truth for every
//! end-to-end claim.

pub mod division;
pub mod egm;
pub mod features;
pub mod geometry;
pub mod ilm;
pub mod img;
pub mod pipeline;
pub mod pnp;
pub mod seeding;
pub mod sparse_render;
pub mod synthetic;

pub use division::ClusterModel;
pub use egm::{ExplicitGeometricMap, MapPoint3D, ReferenceEntry};
pub use features::{Keypoint, MatchSet, PatchDescriptor};
pub use geometry::{pose_error, CameraIntrinsics, Ray, Se3Pose};
pub use ilm::{EncodingConfig, NerfModel, SamplingConfig, TrainConfig};
pub use img::{DepthMap, Image};
pub use pipeline::{EvaluationReport, LocalizationResult, LocalizeConfig};
pub use pnp::{Correspondence2D3D, PoseEstimate, RansacConfig};
pub use sparse_render::{PatchRequest, RenderStats, RenderedPatch};
pub use synthetic::{SyntheticScene, TrajectorySpec};
