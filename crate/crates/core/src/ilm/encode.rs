//! Sinusoidal positional encoding.
//!
//! A 3-vector maps to `[x, y, z]?` followed by one octave block per
//! frequency j: `sin(2^j pi v)` for the three components, then
//! `cos(2^j pi v)`. The features have period 2 in each input component,
//! so callers scale positions (see `ModelConfig::position_scale`) before
//! encoding; unit view directions are already in range.

use nalgebra::Vector3;
use ndarray::Array2;

use super::Real;

/// Feature length: 3 identity components (optional) plus 6 per octave.
pub fn encode_dim(freqs: u32, include_identity: bool) -> usize {
    (if include_identity { 3 } else { 0 }) + 6 * freqs as usize
}

/// Appends the encoding of one (already scaled) vector.
pub fn encode_into<T: Real>(out: &mut Vec<T>, v: &Vector3<f64>, freqs: u32, include_identity: bool) {
    if include_identity {
        out.push(T::of(v.x));
        out.push(T::of(v.y));
        out.push(T::of(v.z));
    }
    for j in 0..freqs {
        let s = (1u64 << j) as f64 * std::f64::consts::PI;
        for k in 0..3 {
            out.push(T::of((s * v[k]).sin()));
        }
        for k in 0..3 {
            out.push(T::of((s * v[k]).cos()));
        }
    }
}

/// Encodes a batch of vectors into an [n, encode_dim] matrix.
pub fn encode_batch<T: Real>(vs: &[Vector3<f64>], freqs: u32, include_identity: bool) -> Array2<T> {
    let dim = encode_dim(freqs, include_identity);
    let mut data = Vec::with_capacity(vs.len() * dim);
    for v in vs {
        encode_into(&mut data, v, freqs, include_identity);
    }
    Array2::from_shape_vec((vs.len(), dim), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_match_the_layout() {
        assert_eq!(encode_dim(0, true), 3);
        assert_eq!(encode_dim(4, false), 24);
        assert_eq!(encode_dim(10, true), 63);
        let batch: Array2<f64> = encode_batch(&[Vector3::new(0.1, 0.2, 0.3)], 4, true);
        assert_eq!(batch.dim(), (1, 27));
    }

    #[test]
    fn zero_vector_encodes_to_identity_and_cosines() {
        let mut out: Vec<f64> = Vec::new();
        encode_into(&mut out, &Vector3::zeros(), 2, true);
        assert_eq!(out[..3], [0.0, 0.0, 0.0]);
        // Each octave: three sin(0) = 0 then three cos(0) = 1.
        assert_eq!(out[3..9], [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(out[9..15], [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn octaves_double_in_frequency() {
        let v = Vector3::new(0.25, 0.0, 0.0);
        let mut out: Vec<f64> = Vec::new();
        encode_into(&mut out, &v, 3, false);
        // j=0: sin(pi/4); j=1: sin(pi/2) = 1; j=2: sin(pi) = 0.
        assert!((out[0] - (std::f64::consts::FRAC_PI_4).sin()).abs() < 1e-15);
        assert!((out[6] - 1.0).abs() < 1e-15);
        assert!(out[12].abs() < 1e-12);
    }

    #[test]
    fn distinct_inputs_in_range_get_distinct_features() {
        let a: Array2<f64> = encode_batch(&[Vector3::new(0.3, -0.4, 0.9)], 6, true);
        let b: Array2<f64> = encode_batch(&[Vector3::new(0.31, -0.4, 0.9)], 6, true);
        let diff: f64 = (&a - &b).iter().map(|d| d.abs()).sum();
        assert!(diff > 1e-3);
    }
}
