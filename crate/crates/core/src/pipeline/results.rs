//! One-line-per-query results format.
//!
//! Successful query:
//! `query=<id> status=ok pose=<12 comma-separated floats, rotation rows then translation>`
//! `inliers=<n> correspondences=<n> candidates=<n>` followed by stage
//! timings and ray statistics. Failed query: `status=failed
//! reason=<no-keypoints|no-candidates|insufficient-matches|ransac-failed>`
//! with the same tail minus the pose. Floats print in shortest
//! round-trip form, so parsing reproduces the values bit for bit.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::Se3Pose;
use crate::sparse_render::RenderStats;

use super::{FailureReason, LocalizationResult, PipelineError, StageTimings};

fn pose_to_string(pose: &Se3Pose) -> String {
    let r = &pose.rotation;
    let t = &pose.translation;
    let vals = [
        r[(0, 0)], r[(0, 1)], r[(0, 2)],
        r[(1, 0)], r[(1, 1)], r[(1, 2)],
        r[(2, 0)], r[(2, 1)], r[(2, 2)],
        t.x, t.y, t.z,
    ];
    vals.map(|v| v.to_string()).join(",")
}

fn pose_from_string(s: &str) -> Result<Se3Pose, PipelineError> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| PipelineError::BadResults(format!("bad pose number {v:?}")))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != 12 {
        return Err(PipelineError::BadResults(format!(
            "pose needs 12 numbers, got {}",
            vals.len()
        )));
    }
    let rotation = Matrix3::new(
        vals[0], vals[1], vals[2],
        vals[3], vals[4], vals[5],
        vals[6], vals[7], vals[8],
    );
    let translation = Vector3::new(vals[9], vals[10], vals[11]);
    Se3Pose::new(rotation, translation)
        .map_err(|e| PipelineError::BadResults(format!("bad pose: {e}")))
}

fn result_to_line(result: &LocalizationResult) -> String {
    let head = match (&result.pose, result.failure) {
        (Some(pose), None) => format!(
            "query={} status=ok pose={}",
            result.query_id,
            pose_to_string(pose)
        ),
        (None, Some(reason)) => format!(
            "query={} status=failed reason={}",
            result.query_id,
            reason.as_str()
        ),
        _ => unreachable!("pose present iff no failure reason"),
    };
    let t = &result.timings;
    let s = &result.ray_stats;
    format!(
        "{head} inliers={} correspondences={} candidates={} retrieval_ms={} render_ms={} \
         describe_ms={} match_ms={} pnp_ms={} unique_rays={} patch_pixels={} image_pixels={} \
         patches={} ray_render_ms={}",
        result.inliers,
        result.correspondences,
        result.candidates_used,
        t.retrieval_ms,
        t.render_ms,
        t.describe_ms,
        t.match_ms,
        t.pnp_ms,
        s.unique_rays,
        s.total_patch_pixels,
        s.full_image_pixels,
        s.n_patches,
        s.render_ms,
    )
}

pub fn results_to_string(results: &[LocalizationResult]) -> String {
    let mut out = String::new();
    for result in results {
        out.push_str(&result_to_line(result));
        out.push('\n');
    }
    out
}

pub fn write_results(path: &Path, results: &[LocalizationResult]) -> Result<(), PipelineError> {
    std::fs::write(path, results_to_string(results))?;
    Ok(())
}

struct FieldReader<'a> {
    tokens: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> FieldReader<'a> {
    fn take(&mut self, key: &str) -> Result<&'a str, PipelineError> {
        let token = self.tokens.next().ok_or_else(|| {
            PipelineError::BadResults(format!("line {}: missing field {key}", self.line))
        })?;
        token.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| {
            PipelineError::BadResults(format!(
                "line {}: expected {key}=..., found {token:?}",
                self.line
            ))
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, PipelineError> {
        let raw = self.take(key)?;
        raw.parse().map_err(|_| {
            PipelineError::BadResults(format!("line {}: bad value for {key}: {raw:?}", self.line))
        })
    }
}

pub fn parse_results(text: &str) -> Result<Vec<LocalizationResult>, PipelineError> {
    let mut results = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = FieldReader {
            tokens: line.split_whitespace(),
            line: index + 1,
        };
        let query_id: u32 = fields.parse("query")?;
        let status = fields.take("status")?;
        let (pose, failure) = match status {
            "ok" => (Some(pose_from_string(fields.take("pose")?)?), None),
            "failed" => {
                let raw = fields.take("reason")?;
                let reason = FailureReason::parse(raw).ok_or_else(|| {
                    PipelineError::BadResults(format!(
                        "line {}: unknown failure reason {raw:?}",
                        index + 1
                    ))
                })?;
                (None, Some(reason))
            }
            other => {
                return Err(PipelineError::BadResults(format!(
                    "line {}: unknown status {other:?}",
                    index + 1
                )))
            }
        };
        let inliers = fields.parse("inliers")?;
        let correspondences = fields.parse("correspondences")?;
        let candidates_used = fields.parse("candidates")?;
        let timings = StageTimings {
            retrieval_ms: fields.parse("retrieval_ms")?,
            render_ms: fields.parse("render_ms")?,
            describe_ms: fields.parse("describe_ms")?,
            match_ms: fields.parse("match_ms")?,
            pnp_ms: fields.parse("pnp_ms")?,
        };
        let ray_stats = RenderStats {
            unique_rays: fields.parse("unique_rays")?,
            total_patch_pixels: fields.parse("patch_pixels")?,
            full_image_pixels: fields.parse("image_pixels")?,
            n_patches: fields.parse("patches")?,
            render_ms: fields.parse("ray_render_ms")?,
        };
        if let Some(extra) = fields.tokens.next() {
            return Err(PipelineError::BadResults(format!(
                "line {}: unexpected trailing field {extra:?}",
                index + 1
            )));
        }
        results.push(LocalizationResult {
            query_id,
            pose,
            failure,
            inliers,
            correspondences,
            candidates_used,
            timings,
            ray_stats,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_results() -> Vec<LocalizationResult> {
        let pose = Se3Pose::look_at(
            Vector3::new(1.1, -2.3, 0.7),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        vec![
            LocalizationResult {
                query_id: 0,
                pose: Some(pose),
                failure: None,
                inliers: 37,
                correspondences: 91,
                candidates_used: 2,
                timings: StageTimings {
                    retrieval_ms: 0.53,
                    render_ms: 811.25,
                    describe_ms: 12.5,
                    match_ms: 3.75,
                    pnp_ms: 9.125,
                },
                ray_stats: RenderStats {
                    unique_rays: 9_821,
                    total_patch_pixels: 20_475,
                    full_image_pixels: 16_384,
                    n_patches: 91,
                    render_ms: 795.5,
                },
            },
            LocalizationResult {
                query_id: 1,
                pose: None,
                failure: Some(FailureReason::InsufficientMatches),
                inliers: 0,
                correspondences: 5,
                candidates_used: 20,
                timings: StageTimings::default(),
                ray_stats: RenderStats::default(),
            },
        ]
    }

    #[test]
    fn round_trips_exactly() {
        let results = sample_results();
        let text = results_to_string(&results);
        let parsed = parse_results(&text).unwrap();
        assert_eq!(parsed, results);
        // And a second serialization is byte-identical.
        assert_eq!(results_to_string(&parsed), text);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_results("query=0 status=meh"),
            Err(PipelineError::BadResults(_))
        ));
        assert!(matches!(
            parse_results("query=0 status=failed reason=gremlins inliers=0"),
            Err(PipelineError::BadResults(_))
        ));
        let good = results_to_string(&sample_results());
        let trailing = format!("{} bonus=1", good.lines().next().unwrap());
        assert!(matches!(
            parse_results(&trailing),
            Err(PipelineError::BadResults(_))
        ));
    }

    #[test]
    fn skips_blank_lines() {
        let results = sample_results();
        let text = format!("\n{}\n\n", results_to_string(&results));
        assert_eq!(parse_results(&text).unwrap(), results);
    }
}
