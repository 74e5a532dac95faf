//! The 96 dysphonic acoustic features.
//!
//! Twelve contours are extracted per 750 ms chunk and each is reduced to
//! eight summary statistics. The feature vector is laid out as the twelve
//! contour means first (the compact "base" block), followed by the seven
//! remaining statistics per contour:
//!
//! | contour     | unit | sampled per |
//! |-------------|------|-------------|
//! | f0          | Hz   | voiced frame|
//! | period      | s    | cycle       |
//! | jitter      | -    | cycle pair  |
//! | shimmer     | -    | cycle pair  |
//! | hnr         | dB   | voiced frame|
//! | dfa         | -    | 250 ms win  |
//! | oq          | -    | cycle       |
//! | cq          | -    | cycle       |
//! | gne         | -    | 250 ms win  |
//! | tkeo        | -    | 10 ms frame |
//! | modenergy   | -    | 250 ms win  |
//! | nne         | dB   | 250 ms win  |

use crate::dsp::fft::{band_envelope, envelope, FftPlan};
use crate::dsp::window::hann;
use crate::dsp::{inverse_filter, lpc_coeffs};
use crate::error::{Error, Result};
use crate::features::pitch::{self, PitchAnalysis};
use crate::features::stats::{summarize, STAT_NAMES};
use crate::scalar::{sc, to64, Scalar};

/// Contour names, in feature-vector order.
pub const CONTOUR_NAMES: [&str; 12] = [
    "f0", "period", "jitter", "shimmer", "hnr", "dfa", "oq", "cq", "gne", "tkeo",
    "modenergy", "nne",
];

/// Number of acoustic features (12 means + 12 x 7 higher statistics).
pub const N_FEATURES: usize = 96;

/// Sliding analysis window for the scalar noise/complexity measures.
const WIN: usize = 4000; // 250 ms at 16 kHz
const WIN_STEP: usize = 2000; // 125 ms
/// LPC order for inverse filtering at 16 kHz.
const LPC_ORDER: usize = 24;

/// Column names for the 96 features: `af_{contour}_{stat}`.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = CONTOUR_NAMES
        .iter()
        .map(|c| format!("af_{c}_mean"))
        .collect();
    for c in CONTOUR_NAMES {
        for s in &STAT_NAMES[1..] {
            names.push(format!("af_{c}_{s}"));
        }
    }
    names
}

/// Mean absolute consecutive difference of periods over the mean period.
/// Needs at least two periods.
pub fn jitter_local<S: Scalar>(periods: &[S]) -> Result<S> {
    relative_consecutive_diff(periods, "periods")
}

/// Mean absolute consecutive difference of cycle peak amplitudes over the
/// mean amplitude.
pub fn shimmer_local<S: Scalar>(amplitudes: &[S]) -> Result<S> {
    relative_consecutive_diff(amplitudes, "amplitudes")
}

fn relative_consecutive_diff<S: Scalar>(v: &[S], what: &str) -> Result<S> {
    if v.len() < 2 {
        return Err(Error::InsufficientCycles {
            needed: 2,
            found: v.len(),
        });
    }
    let mean = v.iter().copied().sum::<S>() / sc::<S>(v.len() as f64);
    if mean == S::zero() {
        return Err(Error::Data(format!("zero mean {what}")));
    }
    let mad = v
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<S>()
        / sc::<S>((v.len() - 1) as f64);
    Ok(mad / mean)
}

/// Per-pair contours (|x_{i+1} - x_i| / mean x), used for jitter and
/// shimmer statistics beyond the mean.
fn pair_contour<S: Scalar>(v: &[S]) -> Vec<S> {
    let mean = v.iter().copied().sum::<S>() / sc::<S>(v.len() as f64);
    if mean == S::zero() {
        return vec![S::zero(); v.len().saturating_sub(1)];
    }
    v.windows(2).map(|w| (w[1] - w[0]).abs() / mean).collect()
}

/// Detrended fluctuation analysis, first order. Box sizes are 12
/// log-spaced integers from 16 to n/4; the exponent is the log-log slope
/// of the fluctuation function.
pub fn dfa_exponent<S: Scalar>(x: &[S]) -> S {
    let n = x.len();
    assert!(n >= 64, "dfa needs at least 64 samples");
    let mean = x.iter().copied().sum::<S>() / sc::<S>(n as f64);
    let mut profile = Vec::with_capacity(n);
    let mut acc = S::zero();
    for &v in x {
        acc += v - mean;
        profile.push(acc);
    }

    let lo = 16.0f64;
    let hi = (n / 4) as f64;
    let mut sizes: Vec<usize> = (0..12)
        .map(|i| (lo * (hi / lo).powf(i as f64 / 11.0)).round() as usize)
        .collect();
    sizes.dedup();

    let mut log_n = Vec::new();
    let mut log_f = Vec::new();
    for &size in &sizes {
        let boxes = n / size;
        if boxes == 0 {
            continue;
        }
        let mut rss = S::zero();
        for b in 0..boxes {
            rss += detrend_rss(&profile[b * size..(b + 1) * size]);
        }
        let f = (rss / sc::<S>((boxes * size) as f64)).sqrt();
        if to64(f) > 0.0 {
            log_n.push((size as f64).ln());
            log_f.push(to64(f).ln());
        }
    }
    if log_n.len() < 2 {
        return S::zero();
    }
    let m = log_n.len() as f64;
    let sx: f64 = log_n.iter().sum();
    let sy: f64 = log_f.iter().sum();
    let sxx: f64 = log_n.iter().map(|v| v * v).sum();
    let sxy: f64 = log_n.iter().zip(&log_f).map(|(a, b)| a * b).sum();
    sc((m * sxy - sx * sy) / (m * sxx - sx * sx))
}

/// Residual sum of squares after removing the least-squares line.
fn detrend_rss<S: Scalar>(y: &[S]) -> S {
    let n = y.len();
    let nf = sc::<S>(n as f64);
    let mut sx = S::zero();
    let mut sy = S::zero();
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for (i, &v) in y.iter().enumerate() {
        let x = sc::<S>(i as f64);
        sx += x;
        sy += v;
        sxx += x * x;
        sxy += x * v;
    }
    let denom = nf * sxx - sx * sx;
    let (slope, icept) = if denom == S::zero() {
        (S::zero(), sy / nf)
    } else {
        let sl = (nf * sxy - sx * sy) / denom;
        (sl, (sy - sl * sx) / nf)
    };
    let mut rss = S::zero();
    for (i, &v) in y.iter().enumerate() {
        let r = v - (slope * sc::<S>(i as f64) + icept);
        rss += r * r;
    }
    rss
}

/// Teager-Kaiser energy profile: psi[n] = x[n]^2 - x[n+1] x[n-1], averaged
/// over non-overlapping 10 ms frames.
pub fn tkeo_profile<S: Scalar>(x: &[S]) -> Vec<S> {
    let psi: Vec<S> = (1..x.len() - 1)
        .map(|n| x[n] * x[n] - x[n + 1] * x[n - 1])
        .collect();
    let frame = 160;
    psi.chunks_exact(frame)
        .map(|c| c.iter().copied().sum::<S>() / sc::<S>(frame as f64))
        .collect()
}

/// Glottal-to-noise excitation ratio of one analysis window: maximum
/// pairwise correlation between Hilbert envelopes of three LPC-residual
/// bands (0-1, 1-2, 2-3 kHz), searched over +/-1 ms envelope lags.
fn gne_window<S: Scalar>(x: &[S], rate: u32) -> S {
    let a = lpc_coeffs(x, LPC_ORDER);
    let e = inverse_filter(x, &a);
    let bands = [(0.0, 1000.0), (1000.0, 2000.0), (2000.0, 3000.0)];
    let envs: Vec<Vec<S>> = bands
        .iter()
        .map(|&(lo, hi)| band_envelope(&e, rate, lo, hi))
        .collect();
    let max_lag = (rate as f64 / 1000.0).round() as isize; // 1 ms
    let mut best = S::zero();
    for i in 0..envs.len() {
        for j in i + 1..envs.len() {
            for lag in -max_lag..=max_lag {
                let c = lagged_pearson(&envs[i], &envs[j], lag);
                if c > best {
                    best = c;
                }
            }
        }
    }
    best
}

fn lagged_pearson<S: Scalar>(a: &[S], b: &[S], lag: isize) -> S {
    let n = a.len() as isize;
    let lo = 0.max(-lag);
    let hi = n.min(n - lag);
    if hi - lo < 16 {
        return S::zero();
    }
    let count = sc::<S>((hi - lo) as f64);
    let mut ma = S::zero();
    let mut mb = S::zero();
    for i in lo..hi {
        ma += a[i as usize];
        mb += b[(i + lag) as usize];
    }
    ma /= count;
    mb /= count;
    let mut num = S::zero();
    let mut da = S::zero();
    let mut db = S::zero();
    for i in lo..hi {
        let va = a[i as usize] - ma;
        let vb = b[(i + lag) as usize] - mb;
        num += va * vb;
        da += va * va;
        db += vb * vb;
    }
    let denom = (da * db).sqrt();
    if denom == S::zero() {
        S::zero()
    } else {
        num / denom
    }
}

/// Normalized noise energy of one window: spectral noise-to-total ratio in
/// dB, with harmonic regions (+/- f0/5 around each multiple of f0) masked
/// out of the noise estimate and the noise floor extrapolated under them.
fn nne_window<S: Scalar>(x: &[S], rate: u32, f0_hz: f64) -> S {
    let n = x.len();
    let w: Vec<S> = hann(n);
    let xw: Vec<S> = x.iter().zip(&w).map(|(&a, &b)| a * b).collect();
    let plan = FftPlan::new(n);
    let p = plan.power_spectrum(&xw);
    let df = rate as f64 / n as f64;
    let band_hi = 4000.0f64;
    let guard = f0_hz / 5.0;

    let mut total = S::zero();
    let mut noise = S::zero();
    let mut noise_bins = 0usize;
    let mut band_bins = 0usize;
    for (k, &pk) in p.iter().enumerate().skip(1) {
        let f = k as f64 * df;
        if f > band_hi {
            break;
        }
        band_bins += 1;
        total += pk;
        let nearest = (f / f0_hz).round().max(1.0) * f0_hz;
        if (f - nearest).abs() > guard {
            noise += pk;
            noise_bins += 1;
        }
    }
    if to64(total) <= 0.0 || noise_bins == 0 || band_bins == 0 {
        return sc(0.0);
    }
    // Extrapolate the between-harmonic floor across the full band.
    let noise_full = noise * sc::<S>(band_bins as f64 / noise_bins as f64);
    let ratio = to64(noise_full) / to64(total);
    sc(10.0 * ratio.max(1e-10).log10())
}

/// Envelope modulation energy of one window: fraction of envelope spectral
/// energy in 2-20 Hz (DC included in the total).
fn modenergy_window<S: Scalar>(x: &[S], rate: u32) -> S {
    let env = envelope(x);
    let n = env.len();
    let plan = FftPlan::new(n);
    let spec = plan.forward_real(&env);
    let df = rate as f64 / n as f64;
    let mut total = S::zero();
    let mut modulated = S::zero();
    for (k, c) in spec.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * df;
        let two_sided = k != 0 && !(n % 2 == 0 && k == n / 2);
        let e = if two_sided {
            c.norm_sqr() * sc::<S>(2.0)
        } else {
            c.norm_sqr()
        };
        total += e;
        if (2.0..=20.0).contains(&f) {
            modulated += e;
        }
    }
    if to64(total) <= 0.0 {
        S::zero()
    } else {
        modulated / total
    }
}

/// Open and closed quotient estimates. The chunk is inverse filtered
/// (LPC order 24), the residual leaky-integrated into a flow proxy, and
/// each marked cycle scored by the fraction of samples above 10% of the
/// cycle's peak-to-baseline range.
fn glottal_quotient_contour<S: Scalar>(x: &[S], marks: &[f64]) -> Vec<S> {
    let a = lpc_coeffs(x, LPC_ORDER);
    let e = inverse_filter(x, &a);
    let lambda = sc::<S>(0.995);
    let mut flow = Vec::with_capacity(e.len());
    let mut acc = S::zero();
    for &v in &e {
        acc = lambda * acc + v;
        flow.push(acc);
    }

    let mut oq = Vec::new();
    for w in marks.windows(2) {
        let lo = w[0].ceil() as usize;
        let hi = (w[1].floor() as usize).min(flow.len());
        // Skip cycles inside the filter warm-up.
        if lo < LPC_ORDER * 2 || hi <= lo + 8 {
            continue;
        }
        let cyc = &flow[lo..hi];
        let mut min = cyc[0];
        let mut max = cyc[0];
        for &v in cyc {
            if v < min {
                min = v;
            }
            if v > max {
                max = v;
            }
        }
        let span = max - min;
        if to64(span) <= 0.0 {
            continue;
        }
        let thr = min + sc::<S>(0.1) * span;
        let open = cyc.iter().filter(|&&v| v > thr).count();
        oq.push(sc::<S>(open as f64 / cyc.len() as f64));
    }
    oq
}

/// Scalar noise measures of a chunk: (gne, nne, modenergy), each the mean
/// of its 250 ms window contour.
pub fn noise_measures<S: Scalar>(x: &[S], rate: u32) -> Result<(S, S, S)> {
    let pa = pitch::analyze(x, rate)?;
    let f0 = to64(pa.median_f0());
    let mean = |v: &[S]| v.iter().copied().sum::<S>() / sc::<S>(v.len() as f64);
    let gne: Vec<S> = windows(x).map(|w| gne_window(w, rate)).collect();
    let nne: Vec<S> = windows(x).map(|w| nne_window(w, rate, f0)).collect();
    let me: Vec<S> = windows(x).map(|w| modenergy_window(w, rate)).collect();
    Ok((mean(&gne), mean(&nne), mean(&me)))
}

fn windows<S>(x: &[S]) -> impl Iterator<Item = &[S]> {
    (0..)
        .map(move |i| i * WIN_STEP)
        .take_while(move |&s| s + WIN <= x.len())
        .map(move |s| &x[s..s + WIN])
}

/// f0 contour plus the cycle track (periods and peak amplitudes).
pub fn f0_cycles<S: Scalar>(x: &[S], rate: u32) -> Result<PitchAnalysis<S>> {
    pitch::analyze(x, rate)
}

/// The full 96-dimensional acoustic feature vector of one 750 ms chunk.
/// Needs a voiced chunk with at least four marked cycles.
pub fn af_vector<S: Scalar>(x: &[S], rate: u32) -> Result<Vec<S>> {
    let pa = pitch::analyze(x, rate)?;
    if pa.cycles.marks.len() < 4 {
        return Err(Error::InsufficientCycles {
            needed: 4,
            found: pa.cycles.marks.len(),
        });
    }
    let f0_hz = to64(pa.median_f0());

    let dfa: Vec<S> = windows(x).map(|w| dfa_exponent(w)).collect();
    let gne: Vec<S> = windows(x).map(|w| gne_window(w, rate)).collect();
    let me: Vec<S> = windows(x).map(|w| modenergy_window(w, rate)).collect();
    let nne: Vec<S> = windows(x).map(|w| nne_window(w, rate, f0_hz)).collect();
    let oq = glottal_quotient_contour(x, &pa.cycles.marks);
    let cq: Vec<S> = oq.iter().map(|&v| S::one() - v).collect();

    let contours: [Vec<S>; 12] = [
        pa.f0_contour(),
        pa.cycles.periods_s.clone(),
        pair_contour(&pa.cycles.periods_s),
        pair_contour(&pa.cycles.amplitudes),
        pa.hnr_contour(),
        dfa,
        oq,
        cq,
        gne,
        tkeo_profile(x),
        me,
        nne,
    ];
    for (name, c) in CONTOUR_NAMES.iter().zip(&contours) {
        if c.is_empty() {
            return Err(Error::Data(format!("empty {name} contour")));
        }
    }

    let stats: Vec<[S; 8]> = contours.iter().map(|c| summarize(c).as_array()).collect();
    let mut out = Vec::with_capacity(N_FEATURES);
    out.extend(stats.iter().map(|s| s[0]));
    for s in &stats {
        out.extend_from_slice(&s[1..]);
    }
    debug_assert_eq!(out.len(), N_FEATURES);
    Ok(out)
}
