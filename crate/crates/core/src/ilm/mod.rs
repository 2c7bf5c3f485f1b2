//! Implicit local maps: one small radiance field per camera cluster.
//!
//! Each model is a pair of MLPs (coarse and fine) over positionally
//! encoded 3D points and view directions, trained per cluster on the
//! reference views and rendered with hierarchical ray sampling. Training
//! and inference are hand-rolled (dense layers, reverse-mode gradients,
//! Adam) and deterministic for a fixed seed.
//!
//! The arithmetic is generic over [`Real`] (f32 or f64): f32 is the
//! working precision for training and serialization, f64 exists so
//! finite-difference checks can run above f32 noise.

mod composite;
mod encode;
mod io;
mod mlp;
mod render;
mod sampling;
mod train;

pub use composite::{composite, composite_backward, CompositeOutput};
pub use encode::{encode_batch, encode_dim, encode_into};
pub use io::{load_model, save_model};
pub use mlp::{Dense, ForwardCache, Mlp};
pub use render::{pixel_seed, render_image, render_ray, render_rays, RayRender};
pub use sampling::{sample_coarse, sample_fine};
pub use train::{
    build_ray_dataset, freeze_samples, loss_and_gradients, loss_and_gradients_frozen,
    loss_frozen, train, write_training_log, FrozenSamples, ModelGradients, RayDataset,
    TrainLogEntry,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

#[derive(Debug, Error)]
pub enum IlmError {
    #[error("sample positions not strictly increasing at index {index}")]
    NonMonotonicSamples { index: usize },
    #[error("a ray needs at least one sample interval")]
    EmptySamples,
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    NonFiniteLoss { iteration: usize, loss: f64 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("no training rays (no images, or empty images)")]
    NoTrainingRays,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a model file)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {expected} more bytes")]
    Truncated { expected: u64 },
    #[error("model file inconsistent: {0}")]
    HeaderMismatch(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Scalar type for model arithmetic.
pub trait Real: ndarray::NdFloat {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Sinusoidal positional encoding shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Octaves for 3D positions.
    pub position_freqs: u32,
    /// Octaves for view directions.
    pub direction_freqs: u32,
    /// Prepend the raw coordinates to the encoding.
    pub include_identity: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            position_freqs: 8,
            direction_freqs: 2,
            include_identity: true,
        }
    }
}

impl EncodingConfig {
    pub fn position_dim(&self) -> usize {
        encode_dim(self.position_freqs, self.include_identity)
    }
    pub fn direction_dim(&self) -> usize {
        encode_dim(self.direction_freqs, self.include_identity)
    }
    pub fn validate(&self) -> Result<(), IlmError> {
        if self.position_freqs > 30 || self.direction_freqs > 30 {
            return Err(IlmError::BadConfig(
                "encoding octave count must be <= 30".into(),
            ));
        }
        if self.position_dim() == 0 || self.direction_dim() == 0 {
            return Err(IlmError::BadConfig(
                "encoding must produce at least one feature".into(),
            ));
        }
        Ok(())
    }
}

/// MLP shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub trunk_depth: u32,
    pub trunk_width: u32,
    pub color_hidden_width: u32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            trunk_depth: 4,
            trunk_width: 64,
            color_hidden_width: 32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), IlmError> {
        if self.trunk_depth == 0 || self.trunk_width == 0 || self.color_hidden_width == 0 {
            return Err(IlmError::BadConfig("architecture sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Ray sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Jitter coarse endpoints uniformly within their bins.
    pub stratified: bool,
    pub t_near: f64,
    pub t_far: f64,
}

impl SamplingConfig {
    /// Defaults for a scene of the given spatial scale. Cameras orbit at
    /// 1.05..1.25 scene diameters and the scene fits in a half-diameter
    /// sphere, so every surface hit lies in [0.55, 1.75] diameters; the
    /// segment brackets that with room for the emissive far shell that
    /// absorbs background pixels.
    pub fn for_scale(scene_scale: f64) -> Self {
        Self {
            n_coarse: 32,
            n_fine: 32,
            stratified: true,
            t_near: 0.4 * scene_scale,
            t_far: 2.2 * scene_scale,
        }
    }

    pub fn validate(&self) -> Result<(), IlmError> {
        if self.n_coarse == 0 {
            return Err(IlmError::BadConfig("n_coarse must be positive".into()));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(IlmError::BadConfig(format!(
                "bad sample segment [{}, {}]",
                self.t_near, self.t_far
            )));
        }
        Ok(())
    }
}

/// Model construction parameters (everything except the training loop).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoding: EncodingConfig,
    pub arch: ArchConfig,
    /// Positions are multiplied by this before encoding. The sinusoidal
    /// features are 2-periodic, so this should be about 1/scene_scale to
    /// keep distinct scene points distinct in feature space.
    pub position_scale: f64,
}

impl ModelConfig {
    pub fn for_scale(scene_scale: f64) -> Self {
        Self {
            encoding: EncodingConfig::default(),
            arch: ArchConfig::default(),
            position_scale: 1.0 / scene_scale,
        }
    }
}

/// Optimizer and schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier the learning rate decays to by the final iteration.
    pub lr_decay_target: f64,
    /// Iterations trained at the full rate before decay starts.
    pub lr_decay_after: usize,
    pub coarse_loss_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Rays reserved (never trained on) for the probe PSNR in the log.
    pub probe_rays: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2500,
            batch_size: 512,
            learning_rate: 1e-3,
            lr_decay_target: 1e-8,
            lr_decay_after: 5000,
            coarse_loss_weight: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            probe_rays: 1024,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), IlmError> {
        if self.batch_size == 0 {
            return Err(IlmError::BadConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(IlmError::BadConfig("learning_rate must be positive".into()));
        }
        if !(self.lr_decay_target > 0.0 && self.lr_decay_target <= 1.0) {
            return Err(IlmError::BadConfig("lr_decay_target must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate at an iteration: constant until `lr_decay_after`,
    /// then geometric decay reaching `learning_rate * lr_decay_target`
    /// at the final iteration.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if iteration < self.lr_decay_after || self.iterations <= self.lr_decay_after {
            return self.learning_rate;
        }
        let span = (self.iterations - self.lr_decay_after) as f64;
        let k = (iteration + 1 - self.lr_decay_after) as f64;
        self.learning_rate * self.lr_decay_target.powf(k / span)
    }
}

/// A per-cluster radiance field: coarse and fine MLPs plus the encoding
/// and scaling needed to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct NerfModel<T: Real = f32> {
    pub coarse: Mlp<T>,
    pub fine: Mlp<T>,
    pub encoding: EncodingConfig,
    pub arch: ArchConfig,
    pub position_scale: f64,
    pub cluster_id: u32,
}

impl<T: Real> NerfModel<T> {
    /// Fresh model with uniform fan-in-scaled weights and zero biases.
    pub fn init(cluster_id: u32, config: &ModelConfig, seed: u64) -> Result<Self, IlmError> {
        config.encoding.validate()?;
        config.arch.validate()?;
        if !(config.position_scale.is_finite() && config.position_scale > 0.0) {
            return Err(IlmError::BadConfig(format!(
                "position_scale must be positive, got {}",
                config.position_scale
            )));
        }
        let pos_dim = config.encoding.position_dim();
        let dir_dim = config.encoding.direction_dim();
        let mut coarse_rng: ChaCha8Rng = seeding::stream_rng(seed, "mlp-init", &[0]);
        let mut fine_rng: ChaCha8Rng = seeding::stream_rng(seed, "mlp-init", &[1]);
        Ok(Self {
            coarse: Mlp::init(pos_dim, dir_dim, &config.arch, &mut coarse_rng),
            fine: Mlp::init(pos_dim, dir_dim, &config.arch, &mut fine_rng),
            encoding: config.encoding,
            arch: config.arch,
            position_scale: config.position_scale,
            cluster_id,
        })
    }

    pub fn param_count(&self) -> usize {
        self.coarse.param_count() + self.fine.param_count()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoding: self.encoding,
            arch: self.arch,
            position_scale: self.position_scale,
        }
    }
}
