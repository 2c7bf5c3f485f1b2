//! Training: coarse-to-fine photometric loss, reverse-mode gradients, and
//! a deterministic Adam loop.
//!
//! The loss over a batch of B rays is
//! mean_r [ w_c * mse3(C_coarse, gt) + mse3(C_fine, gt) ]
//! with mse3 the per-channel mean squared error. Gradients flow through
//! the MLP outputs and the compositing weights but not through sample
//! positions; `FrozenSamples` makes that boundary explicit and gives
//! finite-difference checks a fixed integration grid.

use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use super::render::{flatten_segments, slice_ray};
use super::{
    composite, composite_backward, sample_coarse, sample_fine, IlmError, Mlp, ModelConfig,
    NerfModel, Real, SamplingConfig, TrainConfig,
};
use crate::geometry::{pixel_to_ray, CameraIntrinsics, Ray, Se3Pose};
use crate::img::Image;
use crate::seeding;

/// Gradients with the same shape as the model parameters.
pub struct ModelGradients<T: Real> {
    pub coarse: Mlp<T>,
    pub fine: Mlp<T>,
}

/// Sample endpoints fixed per ray: the integration grid both passes use.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSamples {
    pub coarse: Vec<Vec<f64>>,
    pub fine: Vec<Vec<f64>>,
}

/// Draws the sampling grid for a batch: stratified coarse endpoints, then
/// fine endpoints from the coarse pass's weights. `seeds[i]` fully
/// determines ray i.
pub fn freeze_samples<T: Real>(
    model: &NerfModel<T>,
    rays: &[Ray],
    sampling: &SamplingConfig,
    seeds: &[u64],
) -> Result<FrozenSamples, IlmError> {
    if rays.is_empty() {
        return Err(IlmError::EmptyBatch);
    }
    assert_eq!(rays.len(), seeds.len());
    sampling.validate()?;
    let mut rngs: Vec<_> = seeds
        .iter()
        .map(|&s| <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(s))
        .collect();
    let coarse: Vec<Vec<f64>> = rays
        .iter()
        .zip(rngs.iter_mut())
        .map(|(ray, rng)| {
            sample_coarse(ray.t_near, ray.t_far, sampling.n_coarse, sampling.stratified, rng)
        })
        .collect();
    let (offsets, pos_feat, dir_feat) = flatten_segments(rays, &coarse, model);
    let (sigma, rgb) = model.coarse.infer(pos_feat, &dir_feat);
    let mut fine = Vec::with_capacity(rays.len());
    for i in 0..rays.len() {
        let (s, c) = slice_ray(&sigma, &rgb, offsets[i], offsets[i + 1]);
        let out = composite(&coarse[i], &s, &c)?;
        let weights: Vec<f64> = out.weights.iter().map(|w| w.as_f64()).collect();
        fine.push(sample_fine(&coarse[i], &weights, sampling.n_fine, &mut rngs[i])?);
    }
    Ok(FrozenSamples { coarse, fine })
}

/// One differentiable pass (coarse or fine) over a frozen grid.
/// Returns this pass's loss contribution and parameter gradients.
fn pass_with_gradients<T: Real>(
    mlp: &Mlp<T>,
    rays: &[Ray],
    gt: &[[T; 3]],
    endpoint_lists: &[Vec<f64>],
    loss_weight: T,
    model: &NerfModel<T>,
) -> Result<(T, Mlp<T>), IlmError> {
    let (offsets, pos_feat, dir_feat) = flatten_segments(rays, endpoint_lists, model);
    let (sigma, rgb, cache) = mlp.forward(pos_feat, &dir_feat);

    let n_rows = sigma.len();
    let batch = T::of(rays.len() as f64);
    let third = T::of(1.0 / 3.0);
    let mut loss = T::zero();
    let mut d_sigma_flat = Array1::<T>::zeros(n_rows);
    let mut d_rgb_flat = Array2::<T>::zeros((n_rows, 3));
    for i in 0..rays.len() {
        let (s, c) = slice_ray(&sigma, &rgb, offsets[i], offsets[i + 1]);
        let out = composite(&endpoint_lists[i], &s, &c)?;
        let mut err = [T::zero(); 3];
        let mut mse = T::zero();
        for ch in 0..3 {
            err[ch] = out.color[ch] - gt[i][ch];
            mse = mse + err[ch] * err[ch] * third;
        }
        loss = loss + loss_weight * mse / batch;
        // d(loss)/d(ray color).
        let scale = loss_weight * T::of(2.0) * third / batch;
        let d_color = [scale * err[0], scale * err[1], scale * err[2]];
        let (d_s, d_c) = composite_backward(&endpoint_lists[i], &c, &out, &d_color);
        for (row, j) in (offsets[i]..offsets[i + 1]).zip(0..) {
            d_sigma_flat[row] = d_s[j];
            for ch in 0..3 {
                d_rgb_flat[(row, ch)] = d_c[j][ch];
            }
        }
    }
    Ok((loss, mlp.backward(&cache, &d_sigma_flat, &d_rgb_flat)))
}

/// Loss and gradients over a frozen sampling grid.
pub fn loss_and_gradients_frozen<T: Real>(
    model: &NerfModel<T>,
    rays: &[Ray],
    gt: &[[T; 3]],
    frozen: &FrozenSamples,
    coarse_weight: f64,
) -> Result<(T, ModelGradients<T>), IlmError> {
    if rays.is_empty() {
        return Err(IlmError::EmptyBatch);
    }
    assert_eq!(rays.len(), gt.len());
    assert_eq!(rays.len(), frozen.coarse.len());
    assert_eq!(rays.len(), frozen.fine.len());
    let (loss_c, grad_c) =
        pass_with_gradients(&model.coarse, rays, gt, &frozen.coarse, T::of(coarse_weight), model)?;
    let (loss_f, grad_f) =
        pass_with_gradients(&model.fine, rays, gt, &frozen.fine, T::one(), model)?;
    Ok((
        loss_c + loss_f,
        ModelGradients {
            coarse: grad_c,
            fine: grad_f,
        },
    ))
}

/// Loss only, over a frozen grid. A pure function of the parameters:
/// the counterpart finite differences can probe.
pub fn loss_frozen<T: Real>(
    model: &NerfModel<T>,
    rays: &[Ray],
    gt: &[[T; 3]],
    frozen: &FrozenSamples,
    coarse_weight: f64,
) -> Result<T, IlmError> {
    let mut total = T::zero();
    // Accumulate each pass separately, then add the pass totals, matching
    // the gradient path's float association exactly.
    for (mlp, lists, weight) in [
        (&model.coarse, &frozen.coarse, T::of(coarse_weight)),
        (&model.fine, &frozen.fine, T::one()),
    ] {
        let (offsets, pos_feat, dir_feat) = flatten_segments(rays, lists, model);
        let (sigma, rgb) = mlp.infer(pos_feat, &dir_feat);
        let batch = T::of(rays.len() as f64);
        let third = T::of(1.0 / 3.0);
        let mut pass_loss = T::zero();
        for i in 0..rays.len() {
            let (s, c) = slice_ray(&sigma, &rgb, offsets[i], offsets[i + 1]);
            let out = composite(&lists[i], &s, &c)?;
            let mut mse = T::zero();
            for ch in 0..3 {
                let e = out.color[ch] - gt[i][ch];
                mse = mse + e * e * third;
            }
            pass_loss = pass_loss + weight * mse / batch;
        }
        total = total + pass_loss;
    }
    Ok(total)
}

/// Samples a grid at the current parameters, then computes loss and
/// gradients on it (the gradient treats sample positions as constants).
pub fn loss_and_gradients<T: Real>(
    model: &NerfModel<T>,
    rays: &[Ray],
    gt: &[[T; 3]],
    sampling: &SamplingConfig,
    coarse_weight: f64,
    seeds: &[u64],
) -> Result<(T, ModelGradients<T>), IlmError> {
    let frozen = freeze_samples(model, rays, sampling, seeds)?;
    loss_and_gradients_frozen(model, rays, gt, &frozen, coarse_weight)
}

/// All training rays of a cluster: one per pixel per reference view.
pub struct RayDataset {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f32; 3]>,
}

pub fn build_ray_dataset(
    images: &[Image],
    poses: &[Se3Pose],
    intrinsics: &CameraIntrinsics,
    t_near: f64,
    t_far: f64,
) -> Result<RayDataset, IlmError> {
    if images.is_empty() || images.len() != poses.len() {
        return Err(IlmError::NoTrainingRays);
    }
    let mut rays = Vec::new();
    let mut colors = Vec::new();
    for (image, pose) in images.iter().zip(poses) {
        for y in 0..image.height() {
            for x in 0..image.width() {
                rays.push(pixel_to_ray(
                    nalgebra::Vector2::new(f64::from(x), f64::from(y)),
                    intrinsics,
                    pose,
                    (t_near, t_far),
                )?);
                colors.push(image.get(x, y));
            }
        }
    }
    if rays.is_empty() {
        return Err(IlmError::NoTrainingRays);
    }
    Ok(RayDataset { rays, colors })
}

struct Adam {
    m_coarse: Mlp<f32>,
    v_coarse: Mlp<f32>,
    m_fine: Mlp<f32>,
    v_fine: Mlp<f32>,
    step: usize,
}

impl Adam {
    fn new(model: &NerfModel<f32>) -> Self {
        Self {
            m_coarse: model.coarse.zeros_like(),
            v_coarse: model.coarse.zeros_like(),
            m_fine: model.fine.zeros_like(),
            v_fine: model.fine.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut NerfModel<f32>, grads: &ModelGradients<f32>, cfg: &TrainConfig, lr: f64) {
        self.step += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let rate = (lr / bc1) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        let eps = cfg.adam_epsilon as f32;
        let bc2 = bc2 as f32;
        for (params, grads, ms, vs) in [
            (&mut model.coarse, &grads.coarse, &mut self.m_coarse, &mut self.v_coarse),
            (&mut model.fine, &grads.fine, &mut self.m_fine, &mut self.v_fine),
        ] {
            let g_tensors = grads.tensors();
            let m_tensors = ms.tensors_mut();
            let v_tensors = vs.tensors_mut();
            for ((p, g), (m, v)) in params
                .tensors_mut()
                .into_iter()
                .zip(g_tensors)
                .zip(m_tensors.into_iter().zip(v_tensors))
            {
                Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= rate * *m / ((*v / bc2).sqrt() + eps);
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub probe_psnr_db: f64,
}

/// Writes the training curve as CSV.
pub fn write_training_log(path: &Path, log: &[TrainLogEntry]) -> Result<(), IlmError> {
    let mut out = String::from("iteration,loss,probe_psnr_db\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.iteration, e.loss, e.probe_psnr_db));
    }
    Ok(std::fs::write(path, out)?)
}

/// Trains one cluster's model on its reference views.
///
/// Deterministic for a fixed `TrainConfig::seed`. A slice of rays is held
/// out of training as a probe; the returned log records the batch loss and
/// probe PSNR every `log_every` iterations and at the end.
pub fn train(
    cluster_id: u32,
    images: &[Image],
    poses: &[Se3Pose],
    intrinsics: &CameraIntrinsics,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    sampling: &SamplingConfig,
) -> Result<(NerfModel<f32>, Vec<TrainLogEntry>), IlmError> {
    train_config.validate()?;
    sampling.validate()?;
    let dataset = build_ray_dataset(images, poses, intrinsics, sampling.t_near, sampling.t_far)?;
    let seed = train_config.seed;

    // Probe split: held-out rays scored but never trained on.
    let mut indices: Vec<usize> = (0..dataset.rays.len()).collect();
    indices.shuffle(&mut seeding::stream_rng(seed, "probe-split", &[]));
    let n_probe = train_config.probe_rays.min(indices.len() / 2);
    let (probe_idx, pool) = indices.split_at(n_probe);
    if pool.is_empty() {
        return Err(IlmError::NoTrainingRays);
    }
    let probe_rays: Vec<Ray> = probe_idx.iter().map(|&i| dataset.rays[i]).collect();
    let probe_gt: Vec<[f32; 3]> = probe_idx.iter().map(|&i| dataset.colors[i]).collect();
    let probe_seeds: Vec<u64> = (0..probe_rays.len() as u64)
        .map(|i| seeding::mix(seed, &[seeding::tag("probe-ray"), i]))
        .collect();

    let mut model = NerfModel::<f32>::init(
        cluster_id,
        model_config,
        seeding::mix(seed, &[seeding::tag("init")]),
    )?;
    let mut adam = Adam::new(&model);
    let mut log = Vec::new();

    let probe_psnr = |model: &NerfModel<f32>| -> Result<f64, IlmError> {
        if probe_rays.is_empty() {
            return Ok(f64::NAN);
        }
        let rendered = super::render_rays(&probe_rays, &probe_seeds, model, sampling)?;
        let mut se = 0.0f64;
        for (r, gt) in rendered.iter().zip(&probe_gt) {
            for ch in 0..3 {
                let e = f64::from(r.fine[ch]) - f64::from(gt[ch]);
                se += e * e;
            }
        }
        let mse = se / (3.0 * rendered.len() as f64);
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    };

    for iter in 0..train_config.iterations {
        let mut batch_rng = seeding::stream_rng(seed, "batch", &[iter as u64]);
        let mut rays = Vec::with_capacity(train_config.batch_size);
        let mut gt = Vec::with_capacity(train_config.batch_size);
        let mut ray_seeds = Vec::with_capacity(train_config.batch_size);
        for slot in 0..train_config.batch_size {
            let pick = pool[batch_rng.random_range(0..pool.len())];
            rays.push(dataset.rays[pick]);
            gt.push(dataset.colors[pick]);
            ray_seeds.push(seeding::mix(
                seed,
                &[seeding::tag("train-ray"), iter as u64, slot as u64],
            ));
        }
        let (loss, grads) = loss_and_gradients(
            &model,
            &rays,
            &gt,
            sampling,
            train_config.coarse_loss_weight,
            &ray_seeds,
        )?;
        let loss = f64::from(loss);
        if !loss.is_finite() {
            return Err(IlmError::NonFiniteLoss {
                iteration: iter,
                loss,
            });
        }
        adam.update(&mut model, &grads, train_config, train_config.learning_rate_at(iter));

        let last = iter + 1 == train_config.iterations;
        if iter % train_config.log_every.max(1) == 0 || last {
            log.push(TrainLogEntry {
                iteration: iter,
                loss,
                probe_psnr_db: probe_psnr(&model)?,
            });
        }
    }
    Ok((model, log))
}
