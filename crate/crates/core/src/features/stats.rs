//! Summary statistics computed over every feature contour.
//!
//! Population moments throughout; quartiles use linear interpolation at
//! rank (n-1) * q; kurtosis is excess kurtosis. Degenerate cases are
//! pinned: cv = 0 when the mean is zero, kurtosis and skewness are 0 when
//! the contour is constant.

use serde::{Deserialize, Serialize};

use crate::scalar::{sc, Scalar};

/// Names of the eight statistics, in vector order.
pub const STAT_NAMES: [&str; 8] = ["mean", "std", "cv", "q1", "q3", "iqr", "kurt", "skew"];

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Summary<S> {
    pub mean: S,
    pub std: S,
    pub cv: S,
    pub q1: S,
    pub q3: S,
    pub iqr: S,
    pub kurt: S,
    pub skew: S,
}

impl<S: Scalar> Summary<S> {
    /// The statistics in [`STAT_NAMES`] order.
    pub fn as_array(&self) -> [S; 8] {
        [
            self.mean, self.std, self.cv, self.q1, self.q3, self.iqr, self.kurt,
            self.skew,
        ]
    }
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile_sorted<S: Scalar>(sorted: &[S], q: f64) -> S {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let frac = sc::<S>(pos - lo as f64);
    if lo + 1 == n {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Summarize a non-empty contour.
pub fn summarize<S: Scalar>(v: &[S]) -> Summary<S> {
    assert!(!v.is_empty(), "cannot summarize an empty contour");
    let n = sc::<S>(v.len() as f64);
    let mean = v.iter().copied().sum::<S>() / n;

    let mut m2 = S::zero();
    let mut m3 = S::zero();
    let mut m4 = S::zero();
    for &x in v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 = m2 / n;
    m3 = m3 / n;
    m4 = m4 / n;
    let std = m2.sqrt();

    let cv = if mean == S::zero() { S::zero() } else { std / mean };
    let (kurt, skew) = if m2 == S::zero() {
        (S::zero(), S::zero())
    } else {
        (m4 / (m2 * m2) - sc::<S>(3.0), m3 / (m2 * std))
    };

    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in contour"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);

    Summary {
        mean,
        std,
        cv,
        q1,
        q3,
        iqr: q3 - q1,
        kurt,
        skew,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinned_values_for_one_two_three_four() {
        let s = summarize(&[1.0f64, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std, 1.118033988749895, epsilon = 1e-12);
        assert_abs_diff_eq!(s.cv, 0.4472135954999579, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q1, 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q3, 3.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.iqr, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.kurt, -1.36, epsilon = 1e-12);
        assert_abs_diff_eq!(s.skew, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_contour_pins_degenerate_stats() {
        let s = summarize(&[2.0f64; 7]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.cv, 0.0);
        assert_eq!(s.kurt, 0.0);
        assert_eq!(s.skew, 0.0);
        assert_eq!(s.iqr, 0.0);
    }

    #[test]
    fn zero_mean_contour_pins_cv_to_zero() {
        let s = summarize(&[-1.0f64, 1.0]);
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.cv, 0.0);
        assert!(s.std > 0.0);
    }

    #[test]
    fn singleton_contour() {
        let s = summarize(&[5.0f64]);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.q1, 5.0);
        assert_eq!(s.q3, 5.0);
        assert_eq!(s.std, 0.0);
    }

    /// Independent oracle: raw power sums rearranged into central moments.
    fn oracle(v: &[f64]) -> (f64, f64, f64, f64) {
        let n = v.len() as f64;
        let s1: f64 = v.iter().sum();
        let s2: f64 = v.iter().map(|x| x * x).sum();
        let s3: f64 = v.iter().map(|x| x * x * x).sum();
        let s4: f64 = v.iter().map(|x| x * x * x * x).sum();
        let mu = s1 / n;
        let m2 = s2 / n - mu * mu;
        let m3 = s3 / n - 3.0 * mu * s2 / n + 2.0 * mu.powi(3);
        let m4 = s4 / n - 4.0 * mu * s3 / n + 6.0 * mu * mu * s2 / n - 3.0 * mu.powi(4);
        (mu, m2.max(0.0).sqrt(), m4 / (m2 * m2) - 3.0, m3 / (m2 * m2.sqrt()))
    }

    #[test]
    fn matches_raw_moment_oracle() {
        let mut state = 42u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..50 {
            let len = 3 + (trial * 7) % 200;
            let v: Vec<f64> = (0..len).map(|_| next() * 2.0 - 0.5).collect();
            let s = summarize(&v);
            let (mu, sd, k, sk) = oracle(&v);
            assert_abs_diff_eq!(s.mean, mu, epsilon = 1e-12);
            assert_abs_diff_eq!(s.std, sd, epsilon = 1e-12);
            assert_abs_diff_eq!(s.kurt, k, epsilon = 1e-9);
            assert_abs_diff_eq!(s.skew, sk, epsilon = 1e-9);
        }
    }

    #[test]
    fn quartiles_match_sorted_interpolation_oracle() {
        let v = vec![10.0f64, 1.0, 7.0, 3.0, 9.0, 2.0];
        // sorted: 1 2 3 7 9 10; q1 at pos 1.25 -> 2.25; q3 at pos 3.75 -> 8.5
        let s = summarize(&v);
        assert_abs_diff_eq!(s.q1, 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q3, 8.5, epsilon = 1e-12);
    }
}
