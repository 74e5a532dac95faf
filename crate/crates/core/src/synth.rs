//! Synthetic sustained-vowel generator with controllable dysphonia.
//!
//! Source-filter synthesis: a glottal pulse train (triangular flow
//! derivative with a configurable open quotient) excites a cascade of
//! formant resonators. Jitter perturbs each cycle's period, shimmer each
//! cycle's gain, and white noise is mixed after filtering to hit a target
//! harmonics-to-noise ratio. Synthesis runs 4x oversampled at 64 kHz and
//! is decimated to the working rate, so cycle boundaries keep sub-sample
//! accuracy at 16 kHz.
//!
//! The generator doubles as ground truth for the feature extractors and as
//! a corpus substitute: [`synth_corpus`] writes WAVs plus a manifest with
//! healthy and pathological parameter bands that overlap but separate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{self, Signal, WORKING_RATE};
use crate::corpus::{Gender, Label, RecordingMeta};
use crate::error::{Error, Result};
use crate::rng::{mix, stream_rng};

/// Oversampled synthesis rate; decimated by 4 to the working rate.
const SYNTH_RATE: u32 = 4 * WORKING_RATE;

/// Default /a/ formants as (center Hz, bandwidth Hz).
pub const FORMANTS_A: [(f64, f64); 3] = [(700.0, 130.0), (1220.0, 110.0), (2600.0, 260.0)];

/// Full parameter set for one synthetic recording.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoiceSpec {
    pub f0: f64,
    /// Cycle-to-cycle period perturbation: the expected local jitter
    /// (mean absolute consecutive-period difference over the mean period).
    pub jitter: f64,
    /// Cycle-to-cycle gain perturbation: the expected local shimmer
    /// (mean absolute consecutive-amplitude difference over the mean).
    pub shimmer: f64,
    /// Target harmonics-to-noise ratio in dB.
    pub hnr_db: f64,
    pub open_quotient: f64,
    pub formants: Vec<(f64, f64)>,
    pub duration_s: f64,
    pub gender: Gender,
    pub age: u32,
    pub label: Label,
    pub seed: u64,
}

impl VoiceSpec {
    /// A clean mid-range male voice; override fields as needed.
    pub fn healthy_default(seed: u64) -> Self {
        VoiceSpec {
            f0: 150.0,
            jitter: 0.003,
            shimmer: 0.02,
            hnr_db: 26.0,
            open_quotient: 0.6,
            formants: FORMANTS_A.to_vec(),
            duration_s: 1.5,
            gender: Gender::M,
            age: 35,
            label: Label::H,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("voice spec: {what}")))
            }
        };
        check(
            (60.0..=400.0).contains(&self.f0),
            &format!("f0 {} outside 60..=400 Hz", self.f0),
        )?;
        check(
            (0.0..=0.2).contains(&self.jitter),
            &format!("jitter {} outside 0..=0.2", self.jitter),
        )?;
        check(
            (0.0..=0.2).contains(&self.shimmer),
            &format!("shimmer {} outside 0..=0.2", self.shimmer),
        )?;
        check(
            self.open_quotient > 0.0 && self.open_quotient < 1.0,
            &format!("open quotient {} outside (0,1)", self.open_quotient),
        )?;
        check(
            self.duration_s >= 0.3,
            &format!("duration {} below 0.3 s", self.duration_s),
        )?;
        check(!self.formants.is_empty(), "no formants given")?;
        Ok(())
    }
}

/// Triangular flow derivative at phase u in [0,1): rises 0 -> 1 over the
/// first two thirds of the open phase, falls 1 -> -3 over the last third
/// (zero net area, so glottal flow returns to baseline each cycle), zero
/// through the closed phase.
fn pulse_derivative(u: f64, oq: f64) -> f64 {
    let rise_end = 2.0 / 3.0 * oq;
    if u < rise_end {
        u / rise_end
    } else if u < oq {
        1.0 - 4.0 * (u - rise_end) / (oq - rise_end)
    } else {
        0.0
    }
}

/// Two-pole resonator with unity DC gain, applied in place.
fn resonate(x: &mut [f64], center_hz: f64, bandwidth_hz: f64, rate: u32) {
    let dt = 1.0 / rate as f64;
    let c = -(-2.0 * std::f64::consts::PI * bandwidth_hz * dt).exp();
    let b = 2.0
        * (-std::f64::consts::PI * bandwidth_hz * dt).exp()
        * (2.0 * std::f64::consts::PI * center_hz * dt).cos();
    let a = 1.0 - b - c;
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    for v in x.iter_mut() {
        let y = a * *v + b * y1 + c * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Render one sustained vowel at the working rate.
///
/// Deterministic: the same spec (including seed) produces identical
/// samples. Jitter and shimmer draw one Gaussian each per cycle; noise is
/// scaled against the measured power of the filtered voiced signal so the
/// requested HNR holds in the analysis band.
pub fn synth_vowel(spec: &VoiceSpec) -> Result<Signal<f64>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);

    let n_out = (spec.duration_s * WORKING_RATE as f64).round() as usize;
    // One extra chunk of slack so the last cycle completes before trimming.
    let n_synth = n_out * 4 + SYNTH_RATE as usize / 50;
    let t0 = SYNTH_RATE as f64 / spec.f0;

    // Local jitter and shimmer are mean absolute consecutive differences
    // over the mean; for iid Gaussian draws that is 2/sqrt(pi) times the
    // std, so the draws are scaled by sqrt(pi)/2 to make the expected
    // measured value equal the requested one.
    let sigma_scale = std::f64::consts::PI.sqrt() / 2.0;
    let mut voiced = vec![0.0f64; n_synth];
    let mut cycle_start = 0.0f64;
    while (cycle_start as usize) < n_synth {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let gain_eps: f64 = StandardNormal.sample(&mut rng);
        // Perturbed period can't collapse: clamp at a quarter period.
        let period = (t0 * (1.0 + sigma_scale * spec.jitter * eps)).max(t0 * 0.25);
        let gain = (1.0 + sigma_scale * spec.shimmer * gain_eps).max(0.05);
        let first = cycle_start.ceil() as usize;
        let last = ((cycle_start + period).ceil() as usize).min(n_synth);
        for n in first..last {
            // The pulse keeps its nominal-period shape rather than
            // stretching with the perturbed period: every landmark of the
            // cycle (onset, ringing peak, closure) then rides at a fixed
            // offset from the cycle start, so landmark-to-landmark
            // intervals carry the injected period sequence unmixed. A
            // stretched pulse would move the closure by its own cycle's
            // perturbation and blend adjacent periods in any
            // landmark-based period measure.
            let u = (n as f64 - cycle_start) / t0;
            voiced[n] = gain * pulse_derivative(u, spec.open_quotient);
        }
        cycle_start += period;
    }

    for &(f, bw) in &spec.formants {
        resonate(&mut voiced, f, bw, SYNTH_RATE);
    }

    let decimated = audio::resample(&Signal::new(voiced, SYNTH_RATE), WORKING_RATE);
    let mut samples = decimated.samples;
    samples.truncate(n_out);

    // Noise after filtering, scaled by the measured voiced power.
    let power: f64 = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
    let noise_std = (power * 10f64.powf(-spec.hnr_db / 10.0)).sqrt();
    let mut noise_rng = stream_rng(spec.seed, 1);
    for v in samples.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut noise_rng);
        *v += noise_std * g;
    }

    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.9 / peak;
        for v in samples.iter_mut() {
            *v *= scale;
        }
    }
    Ok(Signal::new(samples, WORKING_RATE))
}

/// Parameter bands for corpus generation. Healthy voices sit inside
/// (jitter <= 0.7%, shimmer <= 4%, HNR >= 22 dB); pathological voices
/// break at least one of those limits (jitter >= 1.5%, shimmer >= 8%, or
/// HNR <= 14 dB), with the violated axes chosen per recording.
fn draw_spec(rng: &mut impl Rng, gender: Gender, age: u32, label: Label, seed: u64) -> VoiceSpec {
    let f0 = match gender {
        Gender::M => rng.gen_range(100.0..160.0),
        Gender::F => rng.gen_range(170.0..250.0),
    };
    let formants: Vec<(f64, f64)> = FORMANTS_A
        .iter()
        .map(|&(f, bw)| match gender {
            Gender::M => (f, bw),
            Gender::F => (f * 1.1, bw),
        })
        .collect();
    let healthy_jitter = rng.gen_range(0.001..0.005);
    let healthy_shimmer = rng.gen_range(0.01..0.035);
    let healthy_hnr = rng.gen_range(23.0..32.0);
    let (jitter, shimmer, hnr_db, pathologies) = match label {
        Label::H => (healthy_jitter, healthy_shimmer, healthy_hnr, Vec::new()),
        Label::P => {
            // At least one dysphonic axis; axes combine freely.
            let axes = rng.gen_range(1u8..8);
            let mut tags = Vec::new();
            let jitter = if axes & 1 != 0 {
                tags.push("jitter_excess".to_string());
                rng.gen_range(0.015..0.05)
            } else {
                healthy_jitter
            };
            let shimmer = if axes & 2 != 0 {
                tags.push("shimmer_excess".to_string());
                rng.gen_range(0.08..0.18)
            } else {
                healthy_shimmer
            };
            let hnr = if axes & 4 != 0 {
                tags.push("noise_excess".to_string());
                rng.gen_range(6.0..14.0)
            } else {
                healthy_hnr
            };
            (jitter, shimmer, hnr, tags)
        }
    };
    let spec = VoiceSpec {
        f0,
        jitter,
        shimmer,
        hnr_db,
        open_quotient: rng.gen_range(0.45..0.75),
        formants,
        duration_s: rng.gen_range(1.0..3.0),
        gender,
        age,
        label,
        seed,
    };
    debug_assert!(pathologies.is_empty() == (label == Label::H));
    spec
}

/// Pathology tags for a pathological spec, re-derived from its parameters.
fn pathology_tags(spec: &VoiceSpec) -> Vec<String> {
    if spec.label == Label::H {
        return Vec::new();
    }
    let mut tags = Vec::new();
    if spec.jitter >= 0.015 {
        tags.push("jitter_excess".to_string());
    }
    if spec.shimmer >= 0.08 {
        tags.push("shimmer_excess".to_string());
    }
    if spec.hnr_db <= 14.0 {
        tags.push("noise_excess".to_string());
    }
    tags
}

/// Generate a corpus: `out/wav/*.wav` plus `out/manifest.jsonl`.
///
/// Genders alternate within each class, ages are uniform over 19..=60, and
/// roughly one speaker in seven contributes a second recording, so the
/// splitter's speaker grouping gets exercised. Rendering is parallel; each
/// recording derives its own seed from (seed, index), so output is
/// byte-identical regardless of thread count.
pub fn synth_corpus(
    n_healthy: usize,
    n_pathological: usize,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<Vec<RecordingMeta>> {
    if n_healthy == 0 || n_pathological == 0 {
        return Err(Error::InvalidParam(
            "corpus needs at least one recording per class".into(),
        ));
    }
    let out = out.as_ref();
    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let total = n_healthy + n_pathological;
    let mut jobs: Vec<(String, String, VoiceSpec)> = Vec::with_capacity(total);
    let mut rng = stream_rng(seed, 2);
    // (speaker_id, gender, age) pools per class for repeat recordings.
    let mut pools: [Vec<(String, Gender, u32)>; 2] = [Vec::new(), Vec::new()];
    for i in 0..total {
        let label = if i < n_healthy { Label::H } else { Label::P };
        let within = if label == Label::H { i } else { i - n_healthy };
        let pool = &mut pools[label.index()];
        let reuse = !pool.is_empty() && rng.gen_range(0..7) == 0;
        let (speaker_id, gender, age) = if reuse {
            pool[rng.gen_range(0..pool.len())].clone()
        } else {
            let gender = if within % 2 == 0 { Gender::M } else { Gender::F };
            let age = rng.gen_range(19..=60);
            let speaker = format!("spk{:04}", i);
            pool.push((speaker.clone(), gender, age));
            (speaker, gender, age)
        };
        let spec = draw_spec(&mut rng, gender, age, label, mix(seed, i as u64));
        jobs.push((format!("rec{:04}", i), speaker_id, spec));
    }

    let rows: Vec<RecordingMeta> = jobs
        .par_iter()
        .map(|(id, speaker_id, spec)| -> Result<RecordingMeta> {
            let signal = synth_vowel(spec)?;
            let rel = PathBuf::from("wav").join(format!("{id}.wav"));
            audio::write_wav(out.join(&rel), &signal)?;
            Ok(RecordingMeta {
                id: id.clone(),
                database: "synthetic".into(),
                speaker_id: speaker_id.clone(),
                gender: spec.gender,
                age: spec.age,
                label: spec.label,
                pathologies: pathology_tags(spec),
                duration_s: signal.duration_s(),
                path: rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    crate::corpus::write_manifest_file(out.join("manifest.jsonl"), &rows)?;
    Ok(rows)
}
