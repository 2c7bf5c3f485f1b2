//! Patch-size sweep: localization accuracy and per-patch render time
//! as functions of the patch side length.

use crate::egm::ExplicitGeometricMap;
use crate::geometry::Se3Pose;
use crate::ilm::NerfModel;
use crate::img::Image;
use crate::sparse_render::{render_patches, PatchRequest};

use super::{
    evaluate, localize_all, standard_thresholds, LocalizeConfig, PipelineError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub patch_size: u32,
    pub success_ratio: f64,
    pub median_translation: f64,
    pub median_rotation_deg: f64,
    pub per_patch_render_ms: f64,
}

/// Median wall time to render a single patch of the given size,
/// measured over isolated renders at a fixed sample of reference
/// keypoints so every patch size sees the same scene content.
fn per_patch_render_ms(
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    config: &LocalizeConfig,
    patch_size: u32,
    sample_size: usize,
) -> Result<f64, PipelineError> {
    let reference = &map.references[0];
    let n = reference.keypoints.len().min(sample_size);
    let mut times: Vec<f64> = Vec::with_capacity(n);
    for k in 0..n {
        let request = PatchRequest {
            reference_id: reference.id,
            keypoint_index: k as u32,
            pixel: reference.keypoints[k].0,
            patch_size,
        };
        let (_, stats) = render_patches(&[request], map, models, &config.sampling, config.seed)
            .map_err(|e| PipelineError::BadResults(format!("ablation render failed: {e}")))?;
        times.push(stats.render_ms);
    }
    times.sort_by(f64::total_cmp);
    if times.is_empty() {
        return Err(PipelineError::EmptyResults);
    }
    Ok(times[times.len() / 2])
}

/// Runs the localization suite once per patch size. The success ratio
/// is taken at the first standard threshold; `ransac` and the rest of
/// the base config are shared across sizes.
#[allow(clippy::too_many_arguments)]
pub fn run_patch_ablation(
    map: &ExplicitGeometricMap,
    models: &[NerfModel<f32>],
    queries: &[(u32, Image)],
    ground_truth: &[(u32, Se3Pose)],
    base: &LocalizeConfig,
    patch_sizes: &[u32],
    scene_scale: f64,
    timing_sample: usize,
) -> Result<Vec<AblationRow>, PipelineError> {
    let thresholds = standard_thresholds(scene_scale);
    let mut rows = Vec::with_capacity(patch_sizes.len());
    for &patch_size in patch_sizes {
        let config = LocalizeConfig {
            patch_size,
            ..base.clone()
        };
        let results = localize_all(queries, map, models, &config);
        let report = evaluate(&results, ground_truth, scene_scale, &thresholds)?;
        rows.push(AblationRow {
            patch_size,
            success_ratio: report.thresholds[0].1,
            median_translation: report.median_translation,
            median_rotation_deg: report.median_rotation_deg,
            per_patch_render_ms: per_patch_render_ms(map, models, &config, patch_size, timing_sample)?,
        });
    }
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "patch_size  success_ratio  median_t_err  median_r_err_deg  per_patch_ms\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{:>10}  {:>13.3}  {:>12.6}  {:>16.4}  {:>12.3}\n",
            row.patch_size,
            row.success_ratio,
            row.median_translation,
            row.median_rotation_deg,
            row.per_patch_render_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_formats_one_row_per_size() {
        let rows = vec![
            AblationRow {
                patch_size: 9,
                success_ratio: 0.9,
                median_translation: 0.002,
                median_rotation_deg: 0.4,
                per_patch_render_ms: 4.0,
            },
            AblationRow {
                patch_size: 15,
                success_ratio: 0.95,
                median_translation: 0.001,
                median_rotation_deg: 0.2,
                per_patch_render_ms: 11.0,
            },
        ];
        let table = format_ablation_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().trim_start().starts_with('9'));
        assert!(table.contains("per_patch_ms"));
    }
}
