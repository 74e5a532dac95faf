//! Polyphase rational resampling with a Kaiser-windowed sinc prototype.
//!
//! Design: 64 taps per phase, beta = 9.0, cutoff 0.45 * min(in, out) Hz.
//! Each phase is normalized to unit DC gain so constant signals pass
//! through exactly and periodic signals pick up no phase-dependent
//! amplitude ripple. Output length is ceil(n_in * L / M); identical rates
//! short-circuit to a copy.

use crate::scalar::{sc, to64, Scalar};

const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 9.0;
const CUTOFF_RATIO: f64 = 0.45;

/// Zeroth-order modified Bessel function of the first kind (series
/// expansion, converges quickly for the argument range Kaiser needs).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-21 {
            break;
        }
    }
    sum
}

/// Kaiser window of the given length.
pub fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let c = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|i| {
            let t = (i as f64 - c) / c;
            bessel_i0(beta * (1.0 - t * t).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational-ratio resampler. The filter is designed in f64 and accumulation
/// happens in f64 regardless of the sample scalar.
pub fn resample<S: Scalar>(x: &[S], rate_in: u32, rate_out: u32) -> Vec<S> {
    assert!(rate_in > 0 && rate_out > 0, "rates must be positive");
    if rate_in == rate_out {
        return x.to_vec();
    }
    let g = gcd(rate_in, rate_out);
    let l = (rate_out / g) as usize;
    let m = (rate_in / g) as usize;

    let n_taps = TAPS_PER_PHASE * l;
    let fc = CUTOFF_RATIO * rate_in.min(rate_out) as f64;
    let fs_up = rate_in as f64 * l as f64;
    let w = kaiser(n_taps, KAISER_BETA);
    let c = (n_taps as f64 - 1.0) / 2.0;
    let mut h: Vec<f64> = (0..n_taps)
        .map(|n| {
            let t = 2.0 * fc / fs_up * (n as f64 - c);
            2.0 * fc / fs_up * sinc(t) * w[n]
        })
        .collect();

    // Per-phase DC normalization: each phase sums to 1/L, so after the xL
    // interpolation gain a constant input stays constant.
    for r in 0..l {
        let s: f64 = (0..TAPS_PER_PHASE).map(|i| h[r + i * l]).sum();
        if s.abs() > 1e-12 {
            let scale = 1.0 / (l as f64 * s);
            for i in 0..TAPS_PER_PHASE {
                h[r + i * l] *= scale;
            }
        }
    }

    let n_in = x.len();
    let n_out = (n_in * l + m - 1) / m;
    let delay = n_taps / 2;
    let gain = l as f64;
    let mut y = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let idx = j * m + delay;
        let q = idx / l;
        let r = idx % l;
        let mut acc = 0.0f64;
        for i in 0..TAPS_PER_PHASE {
            if i > q {
                break;
            }
            let k = q - i;
            if k < n_in {
                acc += h[r + i * l] * to64(x[k]);
            }
        }
        y.push(sc(acc * gain));
    }
    y
}
