//! Property tests for the invariants that hold over every input: summary
//! statistics stay inside the data envelope, chunk layout agrees with the
//! counting rule, frame counts match a literal walk, resampling preserves
//! the rate ratio, and splits partition chunks without splitting speakers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::collection::vec;
use proptest::prelude::*;

use vpd_core::audio::{minmax_normalize, resample, Signal, WORKING_RATE};
use vpd_core::corpus::{
    age_decade, cv_assign, sample_weight, stratified_split, ChunkMeta, Gender, GroupCounts, Label,
    WeightMode,
};
use vpd_core::features::spectral::frame_count;
use vpd_core::features::stats::summarize;
use vpd_core::preprocess::{chunk, chunk_count, CHUNK_SAMPLES};

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One synthetic speaker: metadata plus how many chunks they contribute.
#[derive(Clone, Debug)]
struct SpeakerPlan {
    label: Label,
    gender: Gender,
    age: u32,
    chunks: usize,
}

fn speaker_plan(label: Label, chunks: impl Strategy<Value = usize>) -> impl Strategy<Value = SpeakerPlan> {
    (any::<bool>(), 19u32..=60, chunks).prop_map(move |(m, age, chunks)| SpeakerPlan {
        label,
        gender: if m { Gender::M } else { Gender::F },
        age,
        chunks,
    })
}

/// Manifest where each class has `tpc` single-chunk speakers plus `extra`
/// speakers of 1..=3 chunks. The singles guarantee the greedy test fill
/// can always land exactly on the target, so the split never errors.
fn manifest(tpc: usize, extra: Vec<SpeakerPlan>, singles: Vec<SpeakerPlan>) -> Vec<ChunkMeta> {
    let mut rows = Vec::new();
    let mut plans = singles;
    plans.extend(extra);
    for (s, plan) in plans.iter().enumerate() {
        for j in 0..plan.chunks {
            rows.push(ChunkMeta {
                chunk_id: format!("s{s:03}_c{j}"),
                recording_id: format!("s{s:03}_r0"),
                speaker_id: format!("s{s:03}"),
                gender: plan.gender,
                age: plan.age,
                label: plan.label,
                offset_s: j as f64 * 0.375,
                path: PathBuf::from(format!("chunks/s{s:03}_c{j}.wav")),
            });
        }
    }
    let _ = tpc;
    rows
}

fn singles_strategy(tpc: usize) -> impl Strategy<Value = Vec<SpeakerPlan>> {
    let h = vec(speaker_plan(Label::H, Just(1usize)), tpc..=tpc);
    let p = vec(speaker_plan(Label::P, Just(1usize)), tpc..=tpc);
    (h, p).prop_map(|(mut h, p)| {
        h.extend(p);
        h
    })
}

fn extras_strategy() -> impl Strategy<Value = Vec<SpeakerPlan>> {
    let h = vec(speaker_plan(Label::H, 1usize..=3), 2..8);
    let p = vec(speaker_plan(Label::P, 1usize..=3), 2..8);
    (h, p).prop_map(|(mut h, p)| {
        h.extend(p);
        h
    })
}

proptest! {
    #[test]
    fn summary_stays_inside_data_envelope(v in vec(-1e3..1e3f64, 1..200)) {
        let s = summarize(&v);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
        prop_assert!(s.mean >= lo - slack && s.mean <= hi + slack);
        prop_assert!(s.std >= 0.0);
        prop_assert!(s.q1 >= lo - slack && s.q3 <= hi + slack);
        prop_assert!(s.q1 <= s.q3 + slack);
        prop_assert!((s.iqr - (s.q3 - s.q1)).abs() <= slack);
        let arr = s.as_array();
        prop_assert_eq!(arr, [s.mean, s.std, s.cv, s.q1, s.q3, s.iqr, s.kurt, s.skew]);
    }

    #[test]
    fn summary_shift_moves_location_not_spread(
        v in vec(-100.0..100.0f64, 2..100),
        c in -50.0..50.0f64,
    ) {
        let a = summarize(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = summarize(&shifted);
        let tol = 1e-8 * (1.0 + c.abs());
        prop_assert!((b.mean - (a.mean + c)).abs() < tol * (1.0 + a.mean.abs()));
        prop_assert!((b.std - a.std).abs() < tol * (1.0 + a.std));
        prop_assert!((b.q1 - (a.q1 + c)).abs() < tol * (1.0 + a.q1.abs()));
        prop_assert!((b.q3 - (a.q3 + c)).abs() < tol * (1.0 + a.q3.abs()));
        prop_assert!((b.iqr - a.iqr).abs() < tol * (1.0 + a.iqr));
    }

    #[test]
    fn minmax_lands_in_unit_interval(v in vec(-1e3..1e3f64, 0..150)) {
        let out = minmax_normalize(&v);
        prop_assert_eq!(out.len(), v.len());
        if !v.is_empty() {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                prop_assert!(out.iter().all(|&x| x == 0.0));
            } else {
                prop_assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!(out.iter().any(|&x| x == 0.0));
                prop_assert!(out.iter().any(|&x| x == 1.0));
            }
        }
    }

    #[test]
    fn chunk_layout_matches_count(n in 0usize..48_000) {
        let sig = Signal::new(vec![0.1f64; n], WORKING_RATE);
        let duration = n as f64 / WORKING_RATE as f64;
        match chunk(&sig, "rec") {
            Ok(chunks) => {
                prop_assert_eq!(chunks.len(), chunk_count(duration));
                prop_assert!(!chunks.is_empty());
                let mut prev = f64::NEG_INFINITY;
                for c in &chunks {
                    prop_assert_eq!(c.samples.len(), CHUNK_SAMPLES);
                    prop_assert_eq!(c.recording_id.as_str(), "rec");
                    // offsets are whole-sample quantized, in bounds, advancing
                    let start = c.offset_s * WORKING_RATE as f64;
                    prop_assert!((start - start.round()).abs() < 1e-6);
                    prop_assert!(start.round() as usize + CHUNK_SAMPLES <= n);
                    prop_assert!(c.offset_s > prev);
                    prev = c.offset_s;
                }
            }
            Err(_) => prop_assert_eq!(chunk_count(duration), 0),
        }
    }

    #[test]
    fn frame_count_matches_walk(n in 1usize..5000, win in 1usize..600, step in 1usize..300) {
        match frame_count(n, win, step) {
            Ok(f) => {
                // literal walk: frames advance by step until one covers the tail
                let mut frames = 1usize;
                let mut s = 0usize;
                while s + win < n {
                    s += step;
                    frames += 1;
                }
                prop_assert_eq!(f, frames);
            }
            Err(_) => prop_assert!(win > n),
        }
    }

    #[test]
    fn resample_length_is_rate_ratio_ceiling(
        n in 0usize..4000,
        src_i in 0usize..6,
        dst_i in 0usize..6,
    ) {
        const RATES: [u32; 6] = [8_000, 11_025, 16_000, 22_050, 44_100, 48_000];
        let src = RATES[src_i];
        let dst = RATES[dst_i];
        let sig = Signal::new(vec![0.5f64; n], src);
        let out = resample(&sig, dst);
        prop_assert_eq!(out.rate, dst);
        if src == dst {
            prop_assert_eq!(&out.samples, &sig.samples);
        } else {
            let g = gcd(src, dst);
            let (l, m) = ((dst / g) as usize, (src / g) as usize);
            prop_assert_eq!(out.samples.len(), (n * l + m - 1) / m);
        }
    }

    #[test]
    fn age_decade_is_monotone(a in 0u32..120, b in 0u32..120) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(age_decade(lo) <= age_decade(hi));
        prop_assert!(age_decade(hi) <= 3);
    }

    #[test]
    fn sample_weight_modes_are_reciprocal(
        tpc in 1usize..=2,
        singles in singles_strategy(2),
        extra in extras_strategy(),
    ) {
        let rows = manifest(tpc, extra, singles);
        let counts = GroupCounts::from_chunks(rows.iter());
        for c in &rows {
            let lit = sample_weight(c.label, c.gender, c.age, &counts, WeightMode::Literal)?;
            let inv = sample_weight(c.label, c.gender, c.age, &counts, WeightMode::Inverse)?;
            prop_assert!(lit > 0.0 && lit <= 1.0 + 1e-12);
            prop_assert!(inv >= 1.0 - 1e-12);
            prop_assert!((lit * inv - 1.0).abs() < 1e-12);
        }
        // the largest subgroup on every axis carries full weight
        let lit_max = rows
            .iter()
            .map(|c| sample_weight(c.label, c.gender, c.age, &counts, WeightMode::Literal).unwrap())
            .fold(0.0f64, f64::max);
        prop_assert!(lit_max <= 1.0 + 1e-12);
    }

    #[test]
    fn split_partitions_chunks_and_keeps_speakers_whole(
        tpc in 1usize..=3,
        seed in 0u64..1_000_000,
        extra in extras_strategy(),
    ) {
        let singles_h: Vec<SpeakerPlan> = (0..tpc)
            .map(|i| SpeakerPlan {
                label: Label::H,
                gender: if i % 2 == 0 { Gender::M } else { Gender::F },
                age: 25 + 10 * (i as u32 % 4),
                chunks: 1,
            })
            .collect();
        let mut singles = singles_h.clone();
        for mut s in singles_h {
            s.label = Label::P;
            singles.push(s);
        }
        let rows = manifest(tpc, extra, singles);
        let split = stratified_split(&rows, seed, tpc)?;

        let label_of: BTreeMap<&str, Label> =
            rows.iter().map(|c| (c.chunk_id.as_str(), c.label)).collect();
        let speaker_of: BTreeMap<&str, &str> =
            rows.iter().map(|c| (c.chunk_id.as_str(), c.speaker_id.as_str())).collect();

        // exactly tpc test chunks per class
        for class in [Label::H, Label::P] {
            let n = split.test.iter().filter(|id| label_of[id.as_str()] == class).count();
            prop_assert_eq!(n, tpc);
        }

        // test + folds partition the manifest exactly
        prop_assert_eq!(split.folds.len(), 10);
        let mut seen: Vec<&str> = split.test.iter().map(String::as_str).collect();
        seen.extend(split.folds.iter().flatten().map(String::as_str));
        seen.sort_unstable();
        let mut all: Vec<&str> = rows.iter().map(|c| c.chunk_id.as_str()).collect();
        all.sort_unstable();
        prop_assert_eq!(seen, all);

        // every speaker lands in exactly one bucket
        let mut bucket_of: BTreeMap<&str, usize> = BTreeMap::new();
        let buckets = std::iter::once(&split.test).chain(split.folds.iter());
        for (b, ids) in buckets.enumerate() {
            for id in ids {
                let s = speaker_of[id.as_str()];
                if let Some(&prev) = bucket_of.get(s) {
                    prop_assert_eq!(prev, b, "speaker {} straddles buckets", s);
                } else {
                    bucket_of.insert(s, b);
                }
            }
        }

        // same inputs, same split
        let again = stratified_split(&rows, seed, tpc)?;
        prop_assert_eq!(&split.test, &again.test);
        prop_assert_eq!(&split.folds, &again.folds);

        // each fold validates itself and trains on the other folds only
        let dev: BTreeSet<&str> = split.folds.iter().flatten().map(String::as_str).collect();
        for k in 0..split.folds.len() {
            let (train, valid) = cv_assign(&split, &rows, k)?;
            prop_assert_eq!(&valid, &split.folds[k]);
            let train_speakers: BTreeSet<&str> =
                train.iter().map(|id| speaker_of[id.as_str()]).collect();
            let valid_speakers: BTreeSet<&str> =
                valid.iter().map(|id| speaker_of[id.as_str()]).collect();
            prop_assert!(train_speakers.is_disjoint(&valid_speakers));
            // speakers are whole per fold, so train is the rest of dev
            let mut rest: Vec<&str> = dev
                .iter()
                .copied()
                .filter(|id| !split.folds[k].iter().any(|v| v == id))
                .collect();
            rest.sort_unstable();
            let train_ids: Vec<&str> = train.iter().map(String::as_str).collect();
            prop_assert_eq!(train_ids, rest);
        }
    }
}
