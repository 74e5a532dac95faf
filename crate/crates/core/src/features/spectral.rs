//! Spectral representations of a 750 ms chunk.
//!
//! MFCC: pre-emphasis 0.97, 25 ms frames every 10 ms (ceil-mode framing
//! with zero padding, so a 12000-sample chunk yields exactly 74 frames),
//! Hamming window, 512-point power spectrum, 26 triangular mel filters
//! spanning 0-8 kHz, natural log with a 1e-10 floor, orthonormal DCT-II
//! keeping coefficients 0..=12. Per-coefficient means and population
//! stds over time are recorded before the matrix itself is min-max
//! scaled to [0, 1].
//!
//! Spectrogram: the chunk is zero-padded to 12800 samples and cut into 25
//! disjoint 512-sample rectangular frames; power spectrum bins 1..=46
//! (31.25 Hz resolution, so 31.25-1437.5 Hz) form a 46 x 25 matrix,
//! min-max scaled as a whole.

use ndarray::Array2;

use crate::dsp::fft::FftPlan;
use crate::dsp::window::hamming;
use crate::error::{Error, Result};
use crate::scalar::{sc, to64, Scalar};

pub const MFCC_WIN: usize = 400;
pub const MFCC_STEP: usize = 160;
pub const MFCC_NFFT: usize = 512;
pub const MFCC_FILTERS: usize = 26;
pub const MFCC_COEFFS: usize = 13;
pub const PREEMPHASIS: f64 = 0.97;

pub const SPEC_NFFT: usize = 512;
pub const SPEC_FRAMES: usize = 25;
/// Spectrogram keeps FFT bins 1..=46.
pub const SPEC_BINS: usize = 46;

/// MFCC matrix (13 x frames) plus the pre-scaling per-coefficient stats.
#[derive(Clone, Debug)]
pub struct MfccBlock<S> {
    pub matrix: Array2<S>,
    pub means: Vec<S>,
    pub stds: Vec<S>,
}

/// Band-limited spectrogram matrix (46 x 25).
#[derive(Clone, Debug)]
pub struct SpecBlock<S> {
    pub matrix: Array2<S>,
}

/// Ceil-mode frame count: 1 + ceil((n - win) / step). Errors when the
/// window does not fit at all.
pub fn frame_count(n: usize, win: usize, step: usize) -> Result<usize> {
    if win == 0 || step == 0 {
        return Err(Error::InvalidParam("zero window or step".into()));
    }
    if n < win {
        return Err(Error::InvalidParam(format!(
            "signal of {n} samples shorter than window {win}"
        )));
    }
    Ok(1 + (n - win).div_ceil(step))
}

/// Column names of the 26 MFCC summary statistics.
pub fn mfcc_stat_names() -> Vec<String> {
    let mut names: Vec<String> = (0..MFCC_COEFFS).map(|i| format!("mfcc_mean_{i:02}")).collect();
    names.extend((0..MFCC_COEFFS).map(|i| format!("mfcc_std_{i:02}")));
    names
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank as (filter, fft-bin) weights on the one-sided
/// spectrum, plus the center frequency of each filter.
fn mel_filterbank<S: Scalar>(rate: u32) -> (Vec<Vec<(usize, S)>>, Vec<f64>) {
    let high = rate as f64 / 2.0;
    let m_lo = hz_to_mel(0.0);
    let m_hi = hz_to_mel(high);
    let points: Vec<usize> = (0..MFCC_FILTERS + 2)
        .map(|i| {
            let mel = m_lo + (m_hi - m_lo) * i as f64 / (MFCC_FILTERS + 1) as f64;
            ((MFCC_NFFT + 1) as f64 * mel_to_hz(mel) / rate as f64).floor() as usize
        })
        .collect();
    let centers: Vec<f64> = (1..=MFCC_FILTERS)
        .map(|i| {
            let mel = m_lo + (m_hi - m_lo) * i as f64 / (MFCC_FILTERS + 1) as f64;
            mel_to_hz(mel)
        })
        .collect();

    let mut filters = Vec::with_capacity(MFCC_FILTERS);
    for j in 0..MFCC_FILTERS {
        let (a, b, c) = (points[j], points[j + 1], points[j + 2]);
        let mut taps = Vec::new();
        for k in a..b {
            taps.push((k, sc::<S>((k - a) as f64 / (b - a) as f64)));
        }
        for k in b..c {
            taps.push((k, sc::<S>((c - k) as f64 / (c - b) as f64)));
        }
        filters.push(taps);
    }
    (filters, centers)
}

/// Log mel filterbank energies of one chunk, (26 x frames). Exposed for
/// tests; `mfcc` applies the DCT on top.
pub fn log_mel_energies<S: Scalar>(x: &[S], rate: u32) -> Result<Array2<S>> {
    let frames = frame_count(x.len(), MFCC_WIN, MFCC_STEP)?;
    let mut pre = Vec::with_capacity(x.len());
    pre.push(x[0]);
    let alpha = sc::<S>(PREEMPHASIS);
    for n in 1..x.len() {
        pre.push(x[n] - alpha * x[n - 1]);
    }

    let window: Vec<S> = hamming(MFCC_WIN);
    let plan = FftPlan::new(MFCC_NFFT);
    let (filters, _) = mel_filterbank::<S>(rate);
    let floor = sc::<S>(1e-10);

    let mut out = Array2::zeros((MFCC_FILTERS, frames));
    let mut frame = vec![S::zero(); MFCC_WIN];
    for t in 0..frames {
        let start = t * MFCC_STEP;
        for (i, f) in frame.iter_mut().enumerate() {
            let idx = start + i;
            *f = if idx < pre.len() {
                pre[idx] * window[i]
            } else {
                S::zero()
            };
        }
        let p = plan.power_spectrum(&frame);
        for (j, taps) in filters.iter().enumerate() {
            let mut e = S::zero();
            for &(k, w) in taps {
                e += w * p[k];
            }
            out[(j, t)] = e.max(floor).ln();
        }
    }
    Ok(out)
}

/// Center frequencies of the mel filters (test hook).
pub fn mel_centers(rate: u32) -> Vec<f64> {
    mel_filterbank::<f64>(rate).1
}

/// MFCC block of one chunk at the given rate.
pub fn mfcc<S: Scalar>(x: &[S], rate: u32) -> Result<MfccBlock<S>> {
    let logmel = log_mel_energies(x, rate)?;
    let frames = logmel.ncols();

    // Orthonormal DCT-II along the filter axis, keeping 13 coefficients.
    let nf = MFCC_FILTERS as f64;
    let mut matrix = Array2::zeros((MFCC_COEFFS, frames));
    for t in 0..frames {
        for k in 0..MFCC_COEFFS {
            let mut acc = 0.0f64;
            for j in 0..MFCC_FILTERS {
                acc += to64(logmel[(j, t)])
                    * (std::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2.0 * nf)).cos();
            }
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            matrix[(k, t)] = sc::<S>(acc * scale);
        }
    }

    // Stats over time, before scaling.
    let tn = sc::<S>(frames as f64);
    let mut means = Vec::with_capacity(MFCC_COEFFS);
    let mut stds = Vec::with_capacity(MFCC_COEFFS);
    for k in 0..MFCC_COEFFS {
        let row = matrix.row(k);
        let mean = row.iter().copied().sum::<S>() / tn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / tn;
        means.push(mean);
        stds.push(var.sqrt());
    }

    // Zero dynamic range (every frame at the log floor) carries no
    // information; the scaled representation is defined as all zeros.
    // Without this, the DC row of the DCT would survive as an offset.
    let flat = {
        let first = logmel[(0, 0)];
        logmel.iter().all(|&v| v == first)
    };
    if flat {
        matrix.fill(S::zero());
    } else {
        minmax_inplace(&mut matrix);
    }
    Ok(MfccBlock { matrix, means, stds })
}

/// Band-limited spectrogram of one 12000-sample chunk.
pub fn spectrogram<S: Scalar>(x: &[S]) -> Result<SpecBlock<S>> {
    let padded_len = SPEC_FRAMES * SPEC_NFFT; // 12800
    if x.len() > padded_len {
        return Err(Error::DimensionMismatch {
            expected: padded_len,
            got: x.len(),
        });
    }
    let mut padded = x.to_vec();
    padded.resize(padded_len, S::zero());

    let plan = FftPlan::new(SPEC_NFFT);
    let mut matrix = Array2::zeros((SPEC_BINS, SPEC_FRAMES));
    for t in 0..SPEC_FRAMES {
        let p = plan.power_spectrum(&padded[t * SPEC_NFFT..(t + 1) * SPEC_NFFT]);
        for b in 0..SPEC_BINS {
            matrix[(b, t)] = p[b + 1];
        }
    }
    minmax_inplace(&mut matrix);
    Ok(SpecBlock { matrix })
}

/// Min-max scale a whole matrix to [0, 1]; constant matrices map to zeros.
fn minmax_inplace<S: Scalar>(m: &mut Array2<S>) {
    let mut lo = m[(0, 0)];
    let mut hi = m[(0, 0)];
    for &v in m.iter() {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi == lo {
        m.fill(S::zero());
    } else {
        let span = hi - lo;
        m.mapv_inplace(|v| (v - lo) / span);
    }
}
