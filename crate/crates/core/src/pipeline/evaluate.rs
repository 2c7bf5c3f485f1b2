//! Pose-error metrics over a batch of localization results: medians,
//! success ratios at scene-scale-normalized thresholds, and report
//! serialization (human table and CSV).

use std::fmt;
use std::path::Path;

use crate::geometry::{pose_error, Se3Pose};

use super::{FailureReason, LocalizationResult, PipelineError};

/// A named (translation, rotation) success threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    pub name: String,
    pub max_translation: f64,
    pub max_rotation_deg: f64,
}

/// One query's scored outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: u32,
    /// Infinite when the query failed.
    pub translation_error: f64,
    pub rotation_error_deg: f64,
    pub inliers: usize,
    pub failure: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub scene_scale: f64,
    pub median_translation: f64,
    pub median_rotation_deg: f64,
    /// Each threshold with the fraction of queries inside it.
    pub thresholds: Vec<(ThresholdSpec, f64)>,
    pub per_query: Vec<QueryOutcome>,
}

/// Metric thresholds translated into scene units: a threshold of `x`
/// meters on a room-sized scene maps to `0.05 * x * scene_scale`, so
/// the 5 cm benchmark threshold becomes `0.0025 * scene_scale`.
pub fn standard_thresholds(scene_scale: f64) -> Vec<ThresholdSpec> {
    let t = |meters: f64| 0.05 * meters * scene_scale;
    [
        ("5cm-5deg", 0.05, 5.0),
        ("25cm-2deg", 0.25, 2.0),
        ("coarse-0.25m-2deg", 0.25, 2.0),
        ("coarse-0.5m-5deg", 0.5, 5.0),
        ("coarse-5m-10deg", 5.0, 10.0),
    ]
    .into_iter()
    .map(|(name, meters, deg)| ThresholdSpec {
        name: name.to_string(),
        max_translation: t(meters),
        max_rotation_deg: deg,
    })
    .collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scores results against ground truth. Failed queries contribute
/// infinite errors to the medians and count against every ratio.
pub fn evaluate(
    results: &[LocalizationResult],
    ground_truth: &[(u32, Se3Pose)],
    scene_scale: f64,
    thresholds: &[ThresholdSpec],
) -> Result<EvaluationReport, PipelineError> {
    if results.is_empty() {
        return Err(PipelineError::EmptyResults);
    }
    let mut per_query = Vec::with_capacity(results.len());
    for result in results {
        let truth = ground_truth
            .iter()
            .find(|(id, _)| *id == result.query_id)
            .map(|(_, pose)| pose)
            .ok_or(PipelineError::MissingGroundTruth(result.query_id))?;
        let (t_err, r_err) = match &result.pose {
            Some(pose) => pose_error(pose, truth),
            None => (f64::INFINITY, f64::INFINITY),
        };
        per_query.push(QueryOutcome {
            query_id: result.query_id,
            translation_error: t_err,
            rotation_error_deg: r_err,
            inliers: result.inliers,
            failure: result.failure,
        });
    }
    let n = per_query.len() as f64;
    let thresholds = thresholds
        .iter()
        .map(|spec| {
            let hits = per_query
                .iter()
                .filter(|q| {
                    q.translation_error <= spec.max_translation
                        && q.rotation_error_deg <= spec.max_rotation_deg
                })
                .count();
            (spec.clone(), hits as f64 / n)
        })
        .collect();
    Ok(EvaluationReport {
        scene_scale,
        median_translation: median(per_query.iter().map(|q| q.translation_error).collect()),
        median_rotation_deg: median(per_query.iter().map(|q| q.rotation_error_deg).collect()),
        thresholds,
        per_query,
    })
}

impl EvaluationReport {
    /// CSV form: `#`-prefixed summary lines, then one row per query.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# threshold mapping: x meters -> 0.05 * x * scene_scale units\n");
        out.push_str(&format!("# scene_scale={}\n", self.scene_scale));
        out.push_str(&format!("# median_translation={}\n", self.median_translation));
        out.push_str(&format!("# median_rotation_deg={}\n", self.median_rotation_deg));
        for (spec, ratio) in &self.thresholds {
            out.push_str(&format!(
                "# threshold {} translation<={} rotation<={}deg ratio={}\n",
                spec.name, spec.max_translation, spec.max_rotation_deg, ratio
            ));
        }
        out.push_str("query_id,translation_error,rotation_error_deg,inliers,status\n");
        for q in &self.per_query {
            let status = match q.failure {
                None => "ok",
                Some(reason) => reason.as_str(),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                q.query_id, q.translation_error, q.rotation_error_deg, q.inliers, status
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "evaluation over {} queries (scene scale {:.4}; thresholds map x meters to 0.05*x*scale units)",
            self.per_query.len(),
            self.scene_scale
        )?;
        writeln!(
            f,
            "  median translation error: {:.6}  median rotation error: {:.4} deg",
            self.median_translation, self.median_rotation_deg
        )?;
        writeln!(f, "  {:<22} {:>12} {:>10} {:>8}", "threshold", "translation", "rot (deg)", "ratio")?;
        for (spec, ratio) in &self.thresholds {
            writeln!(
                f,
                "  {:<22} {:>12.6} {:>10.2} {:>8.3}",
                spec.name, spec.max_translation, spec.max_rotation_deg, ratio
            )?;
        }
        writeln!(f, "  {:<8} {:>14} {:>12} {:>8}  status", "query", "t error", "r error", "inliers")?;
        for q in &self.per_query {
            let status = match q.failure {
                None => "ok",
                Some(reason) => reason.as_str(),
            };
            writeln!(
                f,
                "  {:<8} {:>14.6} {:>12.4} {:>8}  {}",
                q.query_id, q.translation_error, q.rotation_error_deg, q.inliers, status
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::StageTimings;
    use crate::sparse_render::RenderStats;
    use nalgebra::{Matrix3, Vector3};

    fn result(query_id: u32, pose: Option<Se3Pose>, failure: Option<FailureReason>) -> LocalizationResult {
        LocalizationResult {
            query_id,
            pose,
            failure,
            inliers: if failure.is_none() { 20 } else { 0 },
            correspondences: 40,
            candidates_used: 1,
            timings: StageTimings::default(),
            ray_stats: RenderStats::default(),
        }
    }

    fn rot_z(deg: f64) -> Se3Pose {
        let r = deg.to_radians();
        let m = Matrix3::new(
            r.cos(), -r.sin(), 0.0,
            r.sin(), r.cos(), 0.0,
            0.0, 0.0, 1.0,
        );
        Se3Pose::new(m, Vector3::zeros()).unwrap()
    }

    #[test]
    fn exact_poses_score_perfectly() {
        let truth: Vec<(u32, Se3Pose)> = (0..3).map(|i| (i, rot_z(f64::from(i)))).collect();
        let results: Vec<_> = truth
            .iter()
            .map(|(id, pose)| result(*id, Some(*pose), None))
            .collect();
        let report = evaluate(&results, &truth, 1.0, &standard_thresholds(1.0)).unwrap();
        assert_eq!(report.median_translation, 0.0);
        assert!(report.median_rotation_deg < 1e-9);
        for (_, ratio) in &report.thresholds {
            assert_eq!(*ratio, 1.0);
        }
    }

    #[test]
    fn failures_produce_infinite_medians_and_zero_ratios() {
        let truth = vec![(0, Se3Pose::identity()), (1, Se3Pose::identity())];
        let results = vec![
            result(0, None, Some(FailureReason::RansacFailed)),
            result(1, None, Some(FailureReason::NoKeypoints)),
        ];
        let report = evaluate(&results, &truth, 1.0, &standard_thresholds(1.0)).unwrap();
        assert!(report.median_translation.is_infinite());
        assert!(report.median_rotation_deg.is_infinite());
        for (_, ratio) in &report.thresholds {
            assert_eq!(*ratio, 0.0);
        }
    }

    #[test]
    fn hand_computed_medians_match() {
        // Three queries: exact, translated by 0.004, failed.
        let truth: Vec<(u32, Se3Pose)> = (0..3).map(|i| (i, Se3Pose::identity())).collect();
        let shifted = Se3Pose::new(
            Matrix3::identity(),
            Vector3::new(0.004, 0.0, 0.0),
        )
        .unwrap();
        let results = vec![
            result(0, Some(Se3Pose::identity()), None),
            result(1, Some(shifted), None),
            result(2, None, Some(FailureReason::InsufficientMatches)),
        ];
        let report = evaluate(&results, &truth, 1.0, &standard_thresholds(1.0)).unwrap();
        // Sorted translation errors: [0, 0.004, inf] -> median 0.004.
        assert!((report.median_translation - 0.004).abs() < 1e-12);
        // 5cm-5deg at scale 1 is 0.0025: only the exact query passes.
        assert!((report.thresholds[0].1 - 1.0 / 3.0).abs() < 1e-12);
        // 25cm-2deg allows 0.0125: both successes pass.
        assert!((report.thresholds[1].1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let results = vec![result(7, Some(Se3Pose::identity()), None)];
        let err = evaluate(&results, &[], 1.0, &standard_thresholds(1.0));
        assert!(matches!(err, Err(PipelineError::MissingGroundTruth(7))));
    }

    #[test]
    fn empty_results_are_an_error() {
        let err = evaluate(&[], &[], 1.0, &standard_thresholds(1.0));
        assert!(matches!(err, Err(PipelineError::EmptyResults)));
    }

    #[test]
    fn csv_is_deterministic() {
        let truth = vec![(0, Se3Pose::identity())];
        let results = vec![result(0, Some(Se3Pose::identity()), None)];
        let a = evaluate(&results, &truth, 2.0, &standard_thresholds(2.0)).unwrap();
        let b = evaluate(&results, &truth, 2.0, &standard_thresholds(2.0)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().contains("query_id,translation_error"));
    }
}
