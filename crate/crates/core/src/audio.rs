//! WAV I/O and sample-level utilities.
//!
//! Only 16-bit PCM mono is accepted. Decoding maps i -> i/32768; encoding
//! maps x -> round(x * 32768) clamped to i16, so a decode/encode round trip
//! is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{sc, to64, Scalar};

/// Pipeline working rate; every feature extractor assumes it.
pub const WORKING_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Signal<S> {
    pub samples: Vec<S>,
    pub rate: u32,
}

impl<S: Scalar> Signal<S> {
    pub fn new(samples: Vec<S>, rate: u32) -> Self {
        Signal { samples, rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a 16-bit PCM mono WAV file.
pub fn read_wav<S: Scalar>(path: impl AsRef<Path>) -> Result<Signal<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::WavFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4) as usize;
        let body_at = at + 8;
        if body_at + size > bytes.len() {
            return Err(bad("chunk overruns file"));
        }
        let body = &bytes[body_at..body_at + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                fmt = Some((
                    read_u16(body, 0),
                    read_u16(body, 2),
                    read_u32(body, 4),
                    read_u16(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        at = body_at + size + (size & 1);
    }

    let (codec, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if codec != 1 {
        return Err(bad(&format!("unsupported codec {codec}, expected PCM")));
    }
    if bits != 16 {
        return Err(bad(&format!("unsupported bit depth {bits}, expected 16")));
    }
    if channels != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            channels,
        });
    }
    if rate == 0 {
        return Err(bad("zero sample rate"));
    }
    if data.len() % 2 != 0 {
        return Err(bad("odd data chunk length"));
    }

    let samples = data
        .chunks_exact(2)
        .map(|c| sc(i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0))
        .collect();
    Ok(Signal::new(samples, rate))
}

/// Encode a signal as 16-bit PCM mono WAV.
pub fn write_wav<S: Scalar>(path: impl AsRef<Path>, signal: &Signal<S>) -> Result<()> {
    let path = path.as_ref();
    let n = signal.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&signal.rate.to_le_bytes());
    out.extend_from_slice(&(signal.rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &signal.samples {
        let v = (to64(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Resample to the target rate (identity if already there).
pub fn resample<S: Scalar>(signal: &Signal<S>, target: u32) -> Signal<S> {
    Signal::new(
        crate::dsp::resample(&signal.samples, signal.rate, target),
        target,
    )
}

/// Min-max scale to [0, 1]; a constant vector maps to all zeros.
pub fn minmax_normalize<S: Scalar>(v: &[S]) -> Vec<S> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut lo = v[0];
    let mut hi = v[0];
    for &x in v {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    if hi == lo {
        return vec![S::zero(); v.len()];
    }
    let span = hi - lo;
    v.iter().map(|&x| (x - lo) / span).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn wav_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (-1000..1000).map(|i| i as f64 / 1024.0).collect();
        let sig = Signal::new(samples, 16000);
        write_wav(&path, &sig).unwrap();
        let back: Signal<f64> = read_wav(&path).unwrap();
        assert_eq!(back.rate, 16000);
        assert_eq!(back.samples.len(), sig.samples.len());
        // write(read(x)) byte-identity: re-encode and compare files
        let path2 = dir.path().join("t2.wav");
        write_wav(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn known_pcm_values_decode_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("k.wav");
        let sig = Signal::new(vec![0.0f64, 0.5, -0.5, -1.0], 8000);
        write_wav(&path, &sig).unwrap();
        let back: Signal<f64> = read_wav(&path).unwrap();
        assert_eq!(back.samples, vec![0.0, 0.5, -0.5, -1.0]);
    }

    #[test]
    fn clipping_clamps_to_i16_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let sig = Signal::new(vec![2.0f64, -2.0], 8000);
        write_wav(&path, &sig).unwrap();
        let back: Signal<f64> = read_wav(&path).unwrap();
        assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.wav");
        // hand-build a stereo header
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&40u32.to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes()); // stereo
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&64000u32.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, out).unwrap();
        match read_wav::<f64>(&path) {
            Err(Error::UnsupportedChannels { channels, .. }) => assert_eq!(channels, 2),
            other => panic!("expected UnsupportedChannels, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFFxxxx").unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(Error::WavFormat { .. })));
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let v = minmax_normalize(&[2.0f64, 4.0, 3.0]);
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn minmax_of_constant_is_zeros() {
        let v = minmax_normalize(&[3.0f64; 5]);
        assert_eq!(v, vec![0.0; 5]);
    }
}
