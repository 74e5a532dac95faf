//! Shared signal-processing primitives.

pub mod fft;
pub mod lpc;
pub mod resample;
pub mod window;

pub use fft::FftPlan;
pub use lpc::{inverse_filter, lpc_coeffs};
pub use resample::resample;
pub use window::{hamming, hann};
