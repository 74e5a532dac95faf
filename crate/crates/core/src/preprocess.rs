//! Admission filtering and chunking.
//!
//! Recordings shorter than 750 ms or from speakers outside 19..=60 years
//! are excluded. Admitted recordings are cut into 750 ms chunks at 16 kHz
//! (12000 samples):
//!
//! * duration in [0.750, 0.950): one chunk centered in the usable span,
//!   offset (d - 0.750) / 2;
//! * duration >= 0.950: chunks start at 0.100 + k * 0.375 s (50% overlap)
//!   while start + 0.750 <= d - 0.100, keeping 100 ms guard margins at
//!   both ends.
//!
//! Offsets are quantized to whole samples by flooring.

use crate::audio::{Signal, WORKING_RATE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Chunk length in seconds.
pub const CHUNK_S: f64 = 0.750;
/// Chunk length in samples at the working rate.
pub const CHUNK_SAMPLES: usize = 12_000;
/// Guard margin kept clear at both ends of a long recording.
pub const MARGIN_S: f64 = 0.100;
/// Hop between chunk starts on long recordings.
pub const HOP_S: f64 = 0.375;
/// Minimum duration that activates the margin+overlap layout.
pub const LONG_S: f64 = 0.950;

/// Admission rule: long enough, and speaker age inside the study band.
pub fn admit(duration_s: f64, age: u32) -> bool {
    duration_s >= CHUNK_S && (19..=60).contains(&age)
}

/// One 750 ms excerpt of a recording.
#[derive(Clone, Debug)]
pub struct Chunk<S> {
    pub recording_id: String,
    /// Start offset in seconds (whole-sample quantized).
    pub offset_s: f64,
    pub samples: Vec<S>,
}

/// Number of chunks a recording of the given duration yields.
pub fn chunk_count(duration_s: f64) -> usize {
    if duration_s < CHUNK_S {
        0
    } else if duration_s < LONG_S {
        1
    } else {
        // +1e-9 absorbs the one-ulp shortfall when the quotient is an exact
        // integer (e.g. d = 1.700); real fractional parts are >= 1/375.
        ((duration_s - LONG_S) / HOP_S + 1e-9).floor() as usize + 1
    }
}

/// Cut an admitted recording into chunks. The signal must already be at the
/// 16 kHz working rate.
pub fn chunk<S: Scalar>(signal: &Signal<S>, recording_id: &str) -> Result<Vec<Chunk<S>>> {
    if signal.rate != WORKING_RATE {
        return Err(Error::InvalidParam(format!(
            "chunking expects {WORKING_RATE} Hz input, got {} Hz",
            signal.rate
        )));
    }
    let n = signal.samples.len();
    let duration = n as f64 / WORKING_RATE as f64;
    if duration < CHUNK_S {
        return Err(Error::TooShort { duration_s: duration });
    }

    let rate = WORKING_RATE as f64;
    let take = |start_sample: usize| Chunk {
        recording_id: recording_id.to_string(),
        offset_s: start_sample as f64 / rate,
        samples: signal.samples[start_sample..start_sample + CHUNK_SAMPLES].to_vec(),
    };

    if duration < LONG_S {
        let offset = (duration - CHUNK_S) / 2.0;
        let start = (offset * rate).floor() as usize;
        return Ok(vec![take(start)]);
    }

    // Long layout, in integer samples: starts at 1600 + k * 6000 while the
    // chunk end stays 1600 samples clear of the signal end.
    let margin = (MARGIN_S * rate) as usize; // 1600
    let hop = (HOP_S * rate) as usize; // 6000
    let mut chunks = Vec::new();
    let mut start = margin;
    while start + CHUNK_SAMPLES + margin <= n {
        chunks.push(take(start));
        start += hop;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(duration_s: f64) -> Signal<f64> {
        let n = (duration_s * WORKING_RATE as f64).round() as usize;
        Signal::new((0..n).map(|i| i as f64).collect(), WORKING_RATE)
    }

    #[test]
    fn admission_rule() {
        assert!(admit(0.75, 19));
        assert!(admit(10.0, 60));
        assert!(!admit(0.749, 30));
        assert!(!admit(1.0, 18));
        assert!(!admit(1.0, 61));
    }

    #[test]
    fn short_recording_is_rejected() {
        assert!(matches!(
            chunk(&sig(0.7), "r"),
            Err(Error::TooShort { .. })
        ));
        assert_eq!(chunk_count(0.7), 0);
    }

    #[test]
    fn mid_band_recording_yields_one_centered_chunk() {
        let chunks = chunk(&sig(0.80), "r").unwrap();
        assert_eq!(chunks.len(), 1);
        // (0.80 - 0.75) / 2 = 0.025 s = 400 samples
        assert_eq!(chunks[0].offset_s, 400.0 / 16000.0);
        assert_eq!(chunks[0].samples.len(), CHUNK_SAMPLES);
        assert_eq!(chunks[0].samples[0], 400.0);
        assert_eq!(chunk_count(0.80), 1);
    }

    #[test]
    fn exact_threshold_yields_single_margin_chunk() {
        let chunks = chunk(&sig(0.95), "r").unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].offset_s, 0.1);
        assert_eq!(chunk_count(0.95), 1);
    }

    #[test]
    fn two_second_recording_yields_three_overlapping_chunks() {
        let chunks = chunk(&sig(2.0), "r").unwrap();
        let offsets: Vec<f64> = chunks.iter().map(|c| c.offset_s).collect();
        assert_eq!(offsets, vec![0.100, 0.475, 0.850]);
        assert_eq!(chunk_count(2.0), 3);
    }

    #[test]
    fn count_matches_enumeration_on_spot_checks() {
        for d in [0.75, 0.80, 0.949, 0.95, 1.325, 1.7, 2.0, 3.3, 9.999] {
            let enumerated = chunk(&sig(d), "r").map(|c| c.len()).unwrap_or(0);
            assert_eq!(chunk_count(d), enumerated, "duration {d}");
        }
    }

    #[test]
    fn chunks_never_touch_the_margins() {
        for d in [0.95, 1.1, 2.37, 5.0] {
            let s = sig(d);
            let n = s.samples.len();
            for c in chunk(&s, "r").unwrap() {
                let start = (c.offset_s * 16000.0).round() as usize;
                assert!(start >= 1600);
                assert!(start + CHUNK_SAMPLES <= n - 1600);
            }
        }
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let s = Signal::new(vec![0.0f64; 48000], 48000);
        assert!(matches!(chunk(&s, "r"), Err(Error::InvalidParam(_))));
    }
}
