//! Analysis windows.

use crate::scalar::{sc, Scalar};

/// Symmetric Hamming window: 0.54 - 0.46 cos(2 pi i / (n-1)).
pub fn hamming<S: Scalar>(n: usize) -> Vec<S> {
    periodic_cosine(n, 0.54, 0.46)
}

/// Symmetric Hann window: 0.5 - 0.5 cos(2 pi i / (n-1)).
pub fn hann<S: Scalar>(n: usize) -> Vec<S> {
    periodic_cosine(n, 0.5, 0.5)
}

fn periodic_cosine<S: Scalar>(n: usize, a: f64, b: f64) -> Vec<S> {
    if n == 1 {
        return vec![S::one()];
    }
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
            sc(a - b * phase.cos())
        })
        .collect()
}
