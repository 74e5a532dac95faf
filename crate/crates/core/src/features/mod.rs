//! Feature extraction: pitch tracking, the 96 dysphonic acoustic features,
//! and the spectral representations (MFCC, band-limited spectrogram).

pub mod dysphonia;
pub mod pitch;
pub mod spectral;
pub mod stats;
