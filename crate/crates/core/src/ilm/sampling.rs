//! Hierarchical ray sampling: stratified coarse endpoints, then
//! inverse-CDF fine samples concentrated where the coarse pass found mass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::IlmError;

/// Coarse endpoints: n_coarse + 1 strictly increasing values spanning
/// [t_near, t_far].
///
/// Deterministic mode (`stratified = false`) returns the uniform grid
/// including both ends. Stratified mode splits the segment into
/// n_coarse + 1 equal bins and draws one uniform point in each, so the
/// endpoints stay sorted ray to ray while the bin structure keeps every
/// region covered.
pub fn sample_coarse(
    t_near: f64,
    t_far: f64,
    n_coarse: usize,
    stratified: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let count = n_coarse + 1;
    if !stratified {
        return (0..count)
            .map(|i| t_near + (t_far - t_near) * i as f64 / n_coarse.max(1) as f64)
            .collect();
    }
    let width = (t_far - t_near) / count as f64;
    (0..count)
        .map(|i| t_near + width * (i as f64 + rng.random_range(0.0..1.0)))
        .collect()
}

/// Fine endpoints: draws `n_fine` samples from the piecewise-constant
/// distribution proportional to `weights + 1e-5` over the coarse bins,
/// merges them with the coarse endpoints, sorts, and removes exact
/// duplicates. The result is strictly increasing and still spans the
/// original segment.
pub fn sample_fine(
    coarse_endpoints: &[f64],
    weights: &[f64],
    n_fine: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, IlmError> {
    if coarse_endpoints.len() < 2 || weights.len() + 1 != coarse_endpoints.len() {
        return Err(IlmError::EmptySamples);
    }
    for i in 0..coarse_endpoints.len() - 1 {
        if !(coarse_endpoints[i + 1] > coarse_endpoints[i]) {
            return Err(IlmError::NonMonotonicSamples { index: i + 1 });
        }
    }
    let smoothed: Vec<f64> = weights.iter().map(|w| w.max(0.0) + 1e-5).collect();
    let total: f64 = smoothed.iter().sum();

    let mut samples = Vec::with_capacity(n_fine);
    for _ in 0..n_fine {
        let mut u = rng.random_range(0.0..total);
        let mut bin = smoothed.len() - 1;
        for (i, w) in smoothed.iter().enumerate() {
            if u < *w {
                bin = i;
                break;
            }
            u -= w;
        }
        let lo = coarse_endpoints[bin];
        let hi = coarse_endpoints[bin + 1];
        samples.push(lo + (hi - lo) * (u / smoothed[bin]));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Merge two sorted lists, dropping exact duplicates.
    let mut merged = Vec::with_capacity(coarse_endpoints.len() + samples.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < coarse_endpoints.len() || j < samples.len() {
        let next = match (coarse_endpoints.get(i), samples.get(j)) {
            (Some(&a), Some(&b)) if a <= b => {
                i += 1;
                a
            }
            (Some(_), Some(&b)) => {
                j += 1;
                b
            }
            (Some(&a), None) => {
                i += 1;
                a
            }
            (None, Some(&b)) => {
                j += 1;
                b
            }
            (None, None) => unreachable!(),
        };
        if merged.last() != Some(&next) {
            merged.push(next);
        }
    }
    Ok(merged)
}
