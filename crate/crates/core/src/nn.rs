//! Small numeric helpers shared by the attention network and the VAE.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Binary cross-entropy of a logit against a 0/1 target, in a form that
/// does not overflow for large |logit|.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn normal_vec<R: Rng>(len: usize, std: f64, rng: &mut R) -> Array1<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

pub fn normal_mat<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Rounds every value to the nearest f32, matching what a saved artifact
/// holds.
pub fn round_to_f32<'a>(values: impl IntoIterator<Item = &'a mut f64>) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Hex SHA-256 over the little-endian bytes of `values`.
pub fn checksum<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Relative error used by the gradient checks. The denominator is floored
/// at `1e-6` so that gradients that are zero on both sides compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
