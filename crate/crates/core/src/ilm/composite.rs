//! Volume compositing along a ray, forward and backward.
//!
//! Given interval endpoints t_0 < ... < t_n and per-interval densities
//! tau_i and colors c_i (evaluated at interval midpoints), each interval
//! absorbs alpha_i = 1 - exp(-tau_i delta_i) of the remaining light
//! T_i = exp(-sum_{j<i} tau_j delta_j), contributing weight
//! w_i = alpha_i T_i. The ray color is sum w_i c_i, and the weights obey
//! sum w_i = 1 - exp(-sum tau_i delta_i) identically.

use super::{IlmError, Real};

pub struct CompositeOutput<T> {
    pub color: [T; 3],
    /// Per-interval contribution weights w_i.
    pub weights: Vec<T>,
    /// Transmittance T_i entering each interval (T_0 = 1).
    pub transmittance: Vec<T>,
}

fn check_endpoints(endpoints: &[f64], n_samples: usize) -> Result<(), IlmError> {
    if n_samples == 0 || endpoints.len() != n_samples + 1 {
        return Err(IlmError::EmptySamples);
    }
    for i in 0..endpoints.len() - 1 {
        if !(endpoints[i + 1] > endpoints[i]) {
            return Err(IlmError::NonMonotonicSamples { index: i + 1 });
        }
    }
    Ok(())
}

/// Composites one ray. `sigma` and `color` hold one entry per interval.
pub fn composite<T: Real>(
    endpoints: &[f64],
    sigma: &[T],
    color: &[[T; 3]],
) -> Result<CompositeOutput<T>, IlmError> {
    check_endpoints(endpoints, sigma.len())?;
    assert_eq!(sigma.len(), color.len());
    let n = sigma.len();
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut trans = T::one();
    let mut out = [T::zero(); 3];
    for i in 0..n {
        let delta = T::of(endpoints[i + 1] - endpoints[i]);
        let alpha = T::one() - (-sigma[i] * delta).exp();
        let w = alpha * trans;
        for ch in 0..3 {
            out[ch] = out[ch] + w * color[i][ch];
        }
        transmittance.push(trans);
        weights.push(w);
        trans = trans * (T::one() - alpha);
    }
    Ok(CompositeOutput {
        color: out,
        weights,
        transmittance,
    })
}

/// Reverse pass: derivatives of a scalar loss with respect to each
/// interval's density and color, given d(loss)/d(ray color).
///
/// d/dc_i is w_i g. For densities, raising tau_i absorbs more light in
/// interval i (gain (T_i - w_i) g.c_i per unit delta) and shades every
/// later interval (loss sum_{j>i} w_j g.c_j), hence
/// d/dtau_i = delta_i ((T_i - w_i) g.c_i - sum_{j>i} w_j g.c_j),
/// computed with a reverse suffix sum in O(n).
pub fn composite_backward<T: Real>(
    endpoints: &[f64],
    color: &[[T; 3]],
    out: &CompositeOutput<T>,
    d_color: &[T; 3],
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = color.len();
    debug_assert_eq!(out.weights.len(), n);
    let dot = |c: &[T; 3]| d_color[0] * c[0] + d_color[1] * c[1] + d_color[2] * c[2];
    let mut d_sigma = vec![T::zero(); n];
    let mut d_c = vec![[T::zero(); 3]; n];
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        let delta = T::of(endpoints[i + 1] - endpoints[i]);
        let gc = dot(&color[i]);
        d_sigma[i] = delta * ((out.transmittance[i] - out.weights[i]) * gc - suffix);
        for ch in 0..3 {
            d_c[i][ch] = out.weights[i] * d_color[ch];
        }
        suffix = suffix + out.weights[i] * gc;
    }
    (d_sigma, d_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_density_matches_closed_form() {
        // Uniform tau over [0, L] with constant color: C = (1 - e^(-tau L)) c.
        let n = 64;
        let l = 2.5f64;
        let tau = 0.8f64;
        let endpoints: Vec<f64> = (0..=n).map(|i| l * i as f64 / n as f64).collect();
        let sigma = vec![tau; n];
        let color = vec![[0.2f64, 0.5, 0.9]; n];
        let out = composite(&endpoints, &sigma, &color).unwrap();
        let expected = 1.0 - (-tau * l).exp();
        for ch in 0..3 {
            assert!((out.color[ch] - expected * color[0][ch]).abs() < 1e-10);
        }
    }

    #[test]
    fn weights_sum_to_total_absorption() {
        let endpoints = [0.1, 0.35, 0.4, 1.0, 1.7, 2.0];
        let sigma = [0.0f64, 3.0, 0.7, 0.05, 11.0];
        let color = [[0.5f64; 3]; 5];
        let out = composite(&endpoints, &sigma, &color).unwrap();
        let total: f64 = sigma
            .iter()
            .zip(endpoints.windows(2))
            .map(|(s, w)| s * (w[1] - w[0]))
            .sum();
        let w_sum: f64 = out.weights.iter().sum();
        assert!((w_sum - (1.0 - (-total).exp())).abs() < 1e-12);
    }

    #[test]
    fn zero_density_contributes_nothing() {
        let endpoints = [0.0, 1.0, 2.0, 3.0];
        let sigma = [0.0f64, 5.0, 0.0];
        let color = [[1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let out = composite(&endpoints, &sigma, &color).unwrap();
        assert_eq!(out.weights[0], 0.0);
        assert_eq!(out.color[0], 0.0);
        assert!(out.color[1] > 0.99);
    }

    #[test]
    fn opaque_interval_blocks_everything_behind() {
        let endpoints = [0.0, 1.0, 2.0];
        let sigma = [1e6f64, 1e6];
        let color = [[0.3f64; 3], [0.9; 3]];
        let out = composite(&endpoints, &sigma, &color).unwrap();
        assert!((out.weights[0] - 1.0).abs() < 1e-12);
        assert!(out.weights[1].abs() < 1e-12);
    }

    #[test]
    fn non_monotone_endpoints_are_rejected() {
        let endpoints = [0.0, 1.0, 0.5, 2.0];
        let sigma = [1.0f64; 3];
        let color = [[0.5f64; 3]; 3];
        match composite(&endpoints, &sigma, &color) {
            Err(IlmError::NonMonotonicSamples { index }) => assert_eq!(index, 2),
            other => panic!("expected monotonicity error, got {:?}", other.map(|o| o.color)),
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let endpoints = [0.05, 0.3, 0.55, 0.9, 1.4];
        let sigma = [0.4f64, 1.3, 0.02, 2.2];
        let color = [
            [0.2f64, 0.7, 0.4],
            [0.9, 0.1, 0.5],
            [0.3, 0.3, 0.3],
            [0.6, 0.8, 0.05],
        ];
        let g = [0.7f64, -0.2, 1.1];
        let scalar = |s: &[f64; 4], c: &[[f64; 3]; 4]| -> f64 {
            let out = composite(&endpoints, s, c).unwrap();
            (0..3).map(|ch| g[ch] * out.color[ch]).sum()
        };
        let out = composite(&endpoints, &sigma, &color).unwrap();
        let (d_sigma, d_c) = composite_backward(&endpoints, &color, &out, &g);
        let h = 1e-7;
        for i in 0..4 {
            let mut sp = sigma;
            sp[i] += h;
            let mut sm = sigma;
            sm[i] -= h;
            let fd = (scalar(&sp, &color) - scalar(&sm, &color)) / (2.0 * h);
            assert!(
                (fd - d_sigma[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "d_sigma[{i}]: fd {fd} vs {}",
                d_sigma[i]
            );
            for ch in 0..3 {
                let mut cp = color;
                cp[i][ch] += h;
                let mut cm = color;
                cm[i][ch] -= h;
                let fd = (scalar(&sigma, &cp) - scalar(&sigma, &cm)) / (2.0 * h);
                assert!(
                    (fd - d_c[i][ch]).abs() < 1e-6 * fd.abs().max(1.0),
                    "d_color[{i}][{ch}]: fd {fd} vs {}",
                    d_c[i][ch]
                );
            }
        }
    }
}
