//! Voice pathology detection from sustained-vowel recordings.
//!
//! The crate covers the full experimental pipeline:
//!
//! * audio I/O (16-bit PCM mono WAV), polyphase resampling to 16 kHz;
//! * admission filtering and fixed 750 ms chunking;
//! * four input representations: raw waveform, 96 dysphonic acoustic
//!   features, MFCC matrices with summary statistics, band-limited
//!   spectrograms;
//! * three classifier families: second-order gradient-boosted trees,
//!   isolation forest, and a 1D DenseNet trained by explicit backprop;
//! * speaker-disjoint stratified splitting with balance-compensating
//!   sample weights, randomized hyperparameter search over 10-fold CV,
//!   and report generation;
//! * a synthetic sustained-vowel generator used as test oracle and as a
//!   stand-in corpus.
//!
//! Numeric kernels are generic over [`Scalar`] (f32 or f64). Everything is
//! deterministic given a seed: parallel units derive private RNG streams
//! from (seed, index), so results are independent of thread count.

pub mod audio;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tuner;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for feature extraction and the classical models.
pub type Real = f64;

/// Scalar used for network training.
pub type TrainReal = f32;

/// 16 kHz mono signal in the default precision.
pub type Signal64 = audio::Signal<f64>;
