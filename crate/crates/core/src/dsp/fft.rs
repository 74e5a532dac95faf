//! Thin wrapper around rustfft plus spectral helpers used by the feature
//! extractors (power spectra, analytic signals, band envelopes).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::{sc, Scalar};

/// Forward/inverse FFT pair of a fixed length. Plan once per chunk, reuse
/// across frames.
pub struct FftPlan<S: Scalar> {
    n: usize,
    fwd: Arc<dyn Fft<S>>,
    inv: Arc<dyn Fft<S>>,
}

impl<S: Scalar> FftPlan<S> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        FftPlan { n, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward transform of a real frame (zero-padded or truncated to the
    /// plan length). Returns the full complex spectrum.
    pub fn forward_real(&self, x: &[S]) -> Vec<Complex<S>> {
        let mut buf: Vec<Complex<S>> = x
            .iter()
            .take(self.n)
            .map(|&v| Complex::new(v, S::zero()))
            .collect();
        buf.resize(self.n, Complex::new(S::zero(), S::zero()));
        self.fwd.process(&mut buf);
        buf
    }

    /// In-place forward transform.
    pub fn forward(&self, buf: &mut [Complex<S>]) {
        debug_assert_eq!(buf.len(), self.n);
        self.fwd.process(buf);
    }

    /// In-place inverse transform, normalized by 1/n (so inverse(forward(x))
    /// round-trips).
    pub fn inverse(&self, buf: &mut [Complex<S>]) {
        debug_assert_eq!(buf.len(), self.n);
        self.inv.process(buf);
        let scale = S::one() / sc::<S>(self.n as f64);
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
    }

    /// One-sided power spectrum |X_k|^2 / n for k = 0..=n/2.
    pub fn power_spectrum(&self, x: &[S]) -> Vec<S> {
        let spec = self.forward_real(x);
        let scale = S::one() / sc::<S>(self.n as f64);
        spec[..self.n / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() * scale)
            .collect()
    }
}

/// Analytic signal via spectral masking: negative frequencies zeroed,
/// positive doubled, DC and Nyquist kept.
pub fn analytic_signal<S: Scalar>(x: &[S]) -> Vec<Complex<S>> {
    let n = x.len();
    let plan = FftPlan::new(n);
    let mut spec = plan.forward_real(x);
    let two = sc::<S>(2.0);
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            // keep
        } else if k < half || (n % 2 == 1 && k == half) {
            *v = *v * two;
        } else {
            *v = Complex::new(S::zero(), S::zero());
        }
    }
    plan.inverse(&mut spec);
    spec
}

/// Amplitude envelope (magnitude of the analytic signal).
pub fn envelope<S: Scalar>(x: &[S]) -> Vec<S> {
    analytic_signal(x).iter().map(|c| c.norm()).collect()
}

/// Envelope of the band [lo_hz, hi_hz): the spectrum is masked to positive
/// frequencies inside the band before the inverse transform.
pub fn band_envelope<S: Scalar>(x: &[S], rate: u32, lo_hz: f64, hi_hz: f64) -> Vec<S> {
    let n = x.len();
    let plan = FftPlan::new(n);
    let mut spec = plan.forward_real(x);
    let two = sc::<S>(2.0);
    let df = rate as f64 / n as f64;
    for (k, v) in spec.iter_mut().enumerate() {
        let f = k as f64 * df;
        if k > 0 && k < n - k && f >= lo_hz && f < hi_hz {
            *v = *v * two;
        } else {
            *v = Complex::new(S::zero(), S::zero());
        }
    }
    plan.inverse(&mut spec);
    spec.iter().map(|c| c.norm()).collect()
}
