//! Corpus management: recording manifests, chunk metadata, leakage-safe
//! stratified splitting, balance-compensating sample weights, and the
//! feature-table CSV format.
//!
//! Splitting works at speaker granularity: all chunks of a speaker travel
//! together into either the held-out test set or exactly one of the ten
//! folds, so no speaker can appear on both sides of any train/valid/test
//! boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess;
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    H,
    P,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::H => 0,
            Label::P => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::H => "H",
            Label::P => "P",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(Label::H),
            "P" => Ok(Label::P),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Gender::M),
            "F" => Ok(Gender::F),
            other => Err(Error::Data(format!("unknown gender {other:?}"))),
        }
    }
}

/// Age decade used for stratification and the gamma weight groups:
/// 19-29, 30-39, 40-49, 50-60.
pub fn age_decade(age: u32) -> u8 {
    match age {
        0..=29 => 0,
        30..=39 => 1,
        40..=49 => 2,
        _ => 3,
    }
}

/// One recording as declared in the corpus manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RecordingMeta {
    pub id: String,
    pub database: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub age: u32,
    pub label: Label,
    #[serde(default)]
    pub pathologies: Vec<String>,
    pub duration_s: f64,
    pub path: PathBuf,
}

/// One 750 ms chunk after preprocessing.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChunkMeta {
    pub chunk_id: String,
    pub recording_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub age: u32,
    pub label: Label,
    pub offset_s: f64,
    pub path: PathBuf,
}

/// Manifest scan result: admitted recordings plus logged rejections.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub admitted: Vec<RecordingMeta>,
    pub rejected: Vec<(RecordingMeta, String)>,
}

/// Read a JSONL manifest file.
pub fn read_manifest_file(path: impl AsRef<Path>) -> Result<Vec<RecordingMeta>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordingMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Write a JSONL manifest file.
pub fn write_manifest_file(path: impl AsRef<Path>, rows: &[RecordingMeta]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scan a corpus root (`manifest.jsonl` + `wav/`): validate that metadata
/// and files agree, apply the admission filter, and report rejects.
///
/// Durations are taken from the decoded WAVs; a declared duration more
/// than one sample off is a stale-metadata error.
pub fn build_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let manifest_path = root.join("manifest.jsonl");
    let rows = if manifest_path.exists() {
        read_manifest_file(&manifest_path)?
    } else {
        Vec::new()
    };

    let mut seen = BTreeSet::new();
    for row in &rows {
        if !seen.insert(row.id.clone()) {
            return Err(Error::Manifest(format!("duplicate recording id {:?}", row.id)));
        }
        if row.label == Label::H && !row.pathologies.is_empty() {
            return Err(Error::Manifest(format!(
                "recording {:?} is labeled H but lists pathologies",
                row.id
            )));
        }
    }

    // Every WAV under wav/ must be referenced by the manifest.
    let wav_dir = root.join("wav");
    if wav_dir.is_dir() {
        let referenced: BTreeSet<PathBuf> = rows.iter().map(|r| root.join(&r.path)).collect();
        let mut orphans = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&wav_dir)
            .map_err(|e| Error::io(&wav_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .collect();
        entries.sort();
        for p in entries {
            if !referenced.contains(&p) {
                orphans.push(p.display().to_string());
            }
        }
        if !orphans.is_empty() {
            return Err(Error::Manifest(format!(
                "wav files without metadata: {}",
                orphans.join(", ")
            )));
        }
    }

    let mut manifest = Manifest::default();
    let mut sorted = rows;
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for mut row in sorted {
        let wav_path = root.join(&row.path);
        if !wav_path.is_file() {
            return Err(Error::Manifest(format!(
                "recording {:?}: file {} missing",
                row.id,
                wav_path.display()
            )));
        }
        let sig: crate::audio::Signal<f64> = crate::audio::read_wav(&wav_path)?;
        let actual = sig.duration_s();
        if (actual - row.duration_s).abs() > 1.0 / sig.rate as f64 {
            return Err(Error::Manifest(format!(
                "recording {:?}: declared duration {:.3} s but file holds {:.3} s",
                row.id, row.duration_s, actual
            )));
        }
        row.duration_s = actual;
        if preprocess::admit(actual, row.age) {
            manifest.admitted.push(row);
        } else {
            let reason = if actual < preprocess::CHUNK_S {
                format!("duration {actual:.3} s below 0.750 s")
            } else {
                format!("age {} outside 19..=60", row.age)
            };
            log::info!("rejecting recording {:?}: {reason}", row.id);
            manifest.rejected.push((row, reason));
        }
    }
    Ok(manifest)
}

/// Test/fold assignment at chunk granularity.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Split {
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl Split {
    /// Development set: every fold chunk, sorted.
    pub fn development(&self) -> Vec<String> {
        let mut dev: Vec<String> = self.folds.iter().flatten().cloned().collect();
        dev.sort();
        dev
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Split> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
struct SpeakerGroup {
    speaker_id: String,
    label: Label,
    gender: Gender,
    decade: u8,
    chunk_ids: Vec<String>,
}

fn group_speakers(chunks: &[ChunkMeta]) -> Result<Vec<SpeakerGroup>> {
    let mut by_speaker: BTreeMap<&str, Vec<&ChunkMeta>> = BTreeMap::new();
    for c in chunks {
        by_speaker.entry(&c.speaker_id).or_default().push(c);
    }
    let mut groups = Vec::with_capacity(by_speaker.len());
    for (speaker, mut items) in by_speaker {
        items.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        let first = items[0];
        for c in &items {
            if c.label != first.label || c.gender != first.gender || c.age != first.age {
                return Err(Error::Data(format!(
                    "speaker {speaker:?} has inconsistent metadata across chunks"
                )));
            }
        }
        groups.push(SpeakerGroup {
            speaker_id: speaker.to_string(),
            label: first.label,
            gender: first.gender,
            decade: age_decade(first.age),
            chunk_ids: items.iter().map(|c| c.chunk_id.clone()).collect(),
        });
    }
    Ok(groups)
}

/// Speaker-disjoint stratified split: fill the test set to exactly
/// `test_per_class` chunks of each class by drawing whole speakers
/// (stratified by class x gender x age decade, greedy nearest-fit), then
/// deal the remaining speakers into 10 folds stratum by stratum.
pub fn stratified_split(
    chunks: &[ChunkMeta],
    seed: u64,
    test_per_class: usize,
) -> Result<Split> {
    let groups = group_speakers(chunks)?;
    let mut rng = stream_rng(seed, 11);

    let mut in_test: BTreeSet<usize> = BTreeSet::new();
    for class in [Label::H, Label::P] {
        // Strata in deterministic key order, each shuffled.
        let mut strata: BTreeMap<(Gender, u8), Vec<usize>> = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            if g.label == class {
                strata.entry((g.gender, g.decade)).or_default().push(i);
            }
        }
        for members in strata.values_mut() {
            members.shuffle(&mut rng);
        }
        let keys: Vec<(Gender, u8)> = strata.keys().cloned().collect();

        let mut gap = test_per_class;
        let mut cursor = 0usize;
        let mut stalled = 0usize;
        while gap > 0 && stalled < keys.len() {
            let key = keys[cursor % keys.len()];
            cursor += 1;
            let members = strata.get_mut(&key).unwrap();
            match members.iter().position(|&i| groups[i].chunk_ids.len() <= gap) {
                Some(pos) => {
                    let i = members.remove(pos);
                    gap -= groups[i].chunk_ids.len();
                    in_test.insert(i);
                    stalled = 0;
                }
                None => stalled += 1,
            }
        }
        if gap > 0 {
            // Nearest-fit fallback across all strata of this class.
            loop {
                let candidates: Vec<usize> = strata
                    .values()
                    .flatten()
                    .cloned()
                    .filter(|&i| groups[i].chunk_ids.len() <= gap)
                    .collect();
                let best = candidates
                    .into_iter()
                    .max_by_key(|&i| (groups[i].chunk_ids.len(), std::cmp::Reverse(groups[i].speaker_id.clone())));
                match best {
                    Some(i) => {
                        for members in strata.values_mut() {
                            members.retain(|&j| j != i);
                        }
                        gap -= groups[i].chunk_ids.len();
                        in_test.insert(i);
                        if gap == 0 {
                            break;
                        }
                    }
                    None => {
                        return Err(Error::Split(format!(
                            "cannot reach {test_per_class} test chunks for class {class}: \
                             {gap} short with no speaker small enough"
                        )));
                    }
                }
            }
        }
    }

    // Remaining speakers dealt round-robin into folds, stratum by stratum,
    // with a rolling cursor so small strata spread across folds too.
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); 10];
    let mut strata: BTreeMap<(Label, Gender, u8), Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        if !in_test.contains(&i) {
            strata.entry((g.label, g.gender, g.decade)).or_default().push(i);
        }
    }
    let mut cursor = 0usize;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[cursor % 10].extend(groups[i].chunk_ids.iter().cloned());
            cursor += 1;
        }
    }

    let mut test: Vec<String> = in_test
        .iter()
        .flat_map(|&i| groups[i].chunk_ids.iter().cloned())
        .collect();
    test.sort();
    for f in &mut folds {
        f.sort();
    }
    Ok(Split { test, folds })
}

/// Chunk counts per class, gender, and gender-age group, computed over the
/// development (training-universe) chunks.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub class: BTreeMap<Label, usize>,
    pub gender: BTreeMap<Gender, usize>,
    pub gender_age: BTreeMap<(Gender, u8), usize>,
}

impl GroupCounts {
    pub fn from_chunks<'a>(chunks: impl IntoIterator<Item = &'a ChunkMeta>) -> Self {
        let mut class = BTreeMap::new();
        let mut gender = BTreeMap::new();
        let mut gender_age = BTreeMap::new();
        for c in chunks {
            *class.entry(c.label).or_insert(0) += 1;
            *gender.entry(c.gender).or_insert(0) += 1;
            *gender_age.entry((c.gender, age_decade(c.age))).or_insert(0) += 1;
        }
        GroupCounts {
            class,
            gender,
            gender_age,
        }
    }
}

/// Weighting direction: the literal published formula down-weights
/// minority groups; the inverse variant compensates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Literal,
    Inverse,
}

/// Balance weight of one sample from its (class, gender, age) subgroup
/// counts: the product of the three count ratios.
pub fn sample_weight(
    label: Label,
    gender: Gender,
    age: u32,
    counts: &GroupCounts,
    mode: WeightMode,
) -> Result<f64> {
    let ratio = |n: usize, max: usize, what: &str| -> Result<f64> {
        if n == 0 || max == 0 {
            return Err(Error::Weight(format!("zero-count subgroup: {what}")));
        }
        Ok(match mode {
            WeightMode::Literal => n as f64 / max as f64,
            WeightMode::Inverse => max as f64 / n as f64,
        })
    };
    let n_class = counts.class.get(&label).copied().unwrap_or(0);
    let max_class = counts.class.values().copied().max().unwrap_or(0);
    let n_gender = counts.gender.get(&gender).copied().unwrap_or(0);
    let max_gender = counts.gender.values().copied().max().unwrap_or(0);
    let key = (gender, age_decade(age));
    let n_ga = counts.gender_age.get(&key).copied().unwrap_or(0);
    let max_ga = counts.gender_age.values().copied().max().unwrap_or(0);

    Ok(ratio(n_class, max_class, "class")?
        * ratio(n_gender, max_gender, "gender")?
        * ratio(n_ga, max_ga, "gender-age")?)
}

/// Train/validation chunk ids for fold k: validation is the fold itself;
/// training drops every chunk of any speaker present in the fold.
pub fn cv_assign(
    split: &Split,
    chunks: &[ChunkMeta],
    k: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    if k >= split.folds.len() {
        return Err(Error::InvalidParam(format!(
            "fold {k} out of range 0..{}",
            split.folds.len()
        )));
    }
    let speaker_of: BTreeMap<&str, &str> = chunks
        .iter()
        .map(|c| (c.chunk_id.as_str(), c.speaker_id.as_str()))
        .collect();
    let valid = split.folds[k].clone();
    let blocked: BTreeSet<&str> = valid
        .iter()
        .filter_map(|id| speaker_of.get(id.as_str()).copied())
        .collect();
    let mut train: Vec<String> = split
        .folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .flat_map(|(_, f)| f.iter())
        .filter(|id| {
            speaker_of
                .get(id.as_str())
                .is_none_or(|s| !blocked.contains(s))
        })
        .cloned()
        .collect();
    train.sort();
    Ok((train, valid))
}

/// Chunk metadata JSONL (one ChunkMeta per line).
pub fn read_chunks_file(path: impl AsRef<Path>) -> Result<Vec<ChunkMeta>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ChunkMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_chunks_file(path: impl AsRef<Path>, rows: &[ChunkMeta]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// The canonical feature table: key columns then named feature columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub chunk_id: String,
    pub recording_id: String,
    pub speaker_id: String,
    /// "test", "fold_0".."fold_9", or "unsplit" before a split is applied.
    pub set: String,
    pub weight: f64,
    pub label: Label,
    pub values: Vec<f64>,
}

pub const KEY_COLUMNS: [&str; 6] = [
    "chunk_id",
    "recording_id",
    "speaker_id",
    "set",
    "weight",
    "label",
];

impl FeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
        header.extend(self.feature_names.iter().map(|s| s.as_str()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![
                r.chunk_id.clone(),
                r.recording_id.clone(),
                r.speaker_id.clone(),
                r.set.clone(),
                format!("{}", r.weight),
                r.label.to_string(),
            ];
            rec.extend(r.values.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < KEY_COLUMNS.len() {
            return Err(Error::Data(format!(
                "feature table {} lacks key columns",
                path.display()
            )));
        }
        for (i, k) in KEY_COLUMNS.iter().enumerate() {
            if &header[i] != *k {
                return Err(Error::Data(format!(
                    "feature table column {i} is {:?}, expected {k:?}",
                    &header[i]
                )));
            }
        }
        let feature_names: Vec<String> = header
            .iter()
            .skip(KEY_COLUMNS.len())
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let values: Vec<f64> = rec
                .iter()
                .skip(KEY_COLUMNS.len())
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Data(format!("bad feature value {v:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != feature_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: feature_names.len(),
                    got: values.len(),
                });
            }
            rows.push(FeatureRow {
                chunk_id: rec[0].to_string(),
                recording_id: rec[1].to_string(),
                speaker_id: rec[2].to_string(),
                set: rec[3].to_string(),
                weight: rec[4]
                    .parse()
                    .map_err(|e| Error::Data(format!("bad weight {:?}: {e}", &rec[4])))?,
                label: rec[5].parse()?,
                values,
            });
        }
        Ok(FeatureTable {
            feature_names,
            rows,
        })
    }
}

/// Per-column z-scaler fit on training rows only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    /// Fit on the given rows (training universe); constant columns get a
    /// unit std so they center to zero without blowing up.
    pub fn fit(rows: &[&[f64]], columns: &[usize]) -> Result<Scaler> {
        if rows.is_empty() {
            return Err(Error::Data("cannot fit scaler on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(columns.len());
        let mut stds = Vec::with_capacity(columns.len());
        for &c in columns {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Scaler {
            columns: columns.to_vec(),
            means,
            stds,
        })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (i, &c) in self.columns.iter().enumerate() {
            row[c] = (row[c] - self.means[i]) / self.stds[i];
        }
    }
}

/// Matrix sidecar CSV: one row per chunk, row-major values.
pub struct MatrixTable {
    pub chunk_ids: Vec<String>,
    pub n_cols: usize,
    pub values: Vec<Vec<f64>>,
}

impl MatrixTable {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["chunk_id".to_string()];
        header.extend((0..self.n_cols).map(|i| format!("v{i:05}")));
        w.write_record(&header)?;
        for (id, vals) in self.chunk_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(vals.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<MatrixTable> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let n_cols = r.headers()?.len().saturating_sub(1);
        let mut chunk_ids = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            chunk_ids.push(rec[0].to_string());
            let row: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Data(format!("bad matrix value {v:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            values.push(row);
        }
        Ok(MatrixTable {
            chunk_ids,
            n_cols,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(speaker: usize, idx: usize, label: Label, gender: Gender, age: u32) -> ChunkMeta {
        ChunkMeta {
            chunk_id: format!("spk{speaker:03}_c{idx}"),
            recording_id: format!("rec{speaker:03}"),
            speaker_id: format!("spk{speaker:03}"),
            gender,
            age,
            label,
            offset_s: 0.1,
            path: PathBuf::from("x.wav"),
        }
    }

    /// Synthetic chunk population: `n` speakers per class, 1-4 chunks each.
    fn population(n: usize) -> Vec<ChunkMeta> {
        let mut chunks = Vec::new();
        let mut sp = 0;
        for class in [Label::H, Label::P] {
            for i in 0..n {
                let gender = if i % 2 == 0 { Gender::M } else { Gender::F };
                let age = 19 + ((i * 7) % 42) as u32;
                let count = 1 + (i * 13) % 4;
                for c in 0..count {
                    chunks.push(chunk(sp, c, class, gender, age));
                }
                sp += 1;
            }
        }
        chunks
    }

    #[test]
    fn decades() {
        assert_eq!(age_decade(19), 0);
        assert_eq!(age_decade(29), 0);
        assert_eq!(age_decade(30), 1);
        assert_eq!(age_decade(49), 2);
        assert_eq!(age_decade(50), 3);
        assert_eq!(age_decade(60), 3);
    }

    #[test]
    fn split_hits_exact_test_sizes() {
        let chunks = population(80);
        let split = stratified_split(&chunks, 7, 40).unwrap();
        let by_id: BTreeMap<&str, &ChunkMeta> =
            chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
        let h = split
            .test
            .iter()
            .filter(|id| by_id[id.as_str()].label == Label::H)
            .count();
        let p = split.test.len() - h;
        assert_eq!(h, 40);
        assert_eq!(p, 40);
        assert_eq!(split.folds.len(), 10);
    }

    #[test]
    fn split_is_deterministic() {
        let chunks = population(60);
        let a = stratified_split(&chunks, 42, 30).unwrap();
        let b = stratified_split(&chunks, 42, 30).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&chunks, 43, 30).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn speakers_never_straddle_sets() {
        let chunks = population(50);
        let split = stratified_split(&chunks, 3, 25).unwrap();
        let speaker_of: BTreeMap<&str, &str> = chunks
            .iter()
            .map(|c| (c.chunk_id.as_str(), c.speaker_id.as_str()))
            .collect();
        let mut home: BTreeMap<&str, usize> = BTreeMap::new();
        for (set_idx, set) in std::iter::once(&split.test)
            .chain(split.folds.iter())
            .enumerate()
        {
            for id in set {
                let s = speaker_of[id.as_str()];
                if let Some(prev) = home.insert(s, set_idx) {
                    assert_eq!(prev, set_idx, "speaker {s} in two sets");
                }
            }
        }
        // every chunk lands somewhere
        let total: usize = split.folds.iter().map(|f| f.len()).sum::<usize>() + split.test.len();
        assert_eq!(total, chunks.len());
    }

    #[test]
    fn split_errors_when_not_enough_chunks() {
        let chunks = population(5); // ~12 chunks per class at most
        assert!(matches!(
            stratified_split(&chunks, 1, 500),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn cv_assign_partitions_development() {
        let chunks = population(40);
        let split = stratified_split(&chunks, 11, 20).unwrap();
        let dev = split.development();
        let mut seen = BTreeSet::new();
        for k in 0..10 {
            let (train, valid) = cv_assign(&split, &chunks, k).unwrap();
            for id in &valid {
                assert!(seen.insert(id.clone()), "{id} validated twice");
            }
            // speaker-level disjointness
            let speaker_of: BTreeMap<&str, &str> = chunks
                .iter()
                .map(|c| (c.chunk_id.as_str(), c.speaker_id.as_str()))
                .collect();
            let valid_speakers: BTreeSet<&str> =
                valid.iter().map(|id| speaker_of[id.as_str()]).collect();
            for id in &train {
                assert!(!valid_speakers.contains(speaker_of[id.as_str()]));
            }
        }
        assert_eq!(seen.len(), dev.len());
    }

    #[test]
    fn weights_match_published_totals() {
        // class H=3995 P=4047, gender M=3908 F=4134; the queried gender-age
        // group is the maximal one.
        let mut counts = GroupCounts {
            class: BTreeMap::new(),
            gender: BTreeMap::new(),
            gender_age: BTreeMap::new(),
        };
        counts.class.insert(Label::H, 3995);
        counts.class.insert(Label::P, 4047);
        counts.gender.insert(Gender::M, 3908);
        counts.gender.insert(Gender::F, 4134);
        counts.gender_age.insert((Gender::F, 1), 2000);
        counts.gender_age.insert((Gender::M, 1), 1500);

        let w_hf = sample_weight(Label::H, Gender::F, 35, &counts, WeightMode::Literal).unwrap();
        assert!((w_hf - 0.98715).abs() < 1e-5, "w(H,F) = {w_hf}");
        let w_pf = sample_weight(Label::P, Gender::F, 35, &counts, WeightMode::Literal).unwrap();
        assert!((w_pf - 1.0).abs() < 1e-12, "w(P,F) = {w_pf}");
        // inverse mode flips the ratios
        let w_inv = sample_weight(Label::H, Gender::F, 35, &counts, WeightMode::Inverse).unwrap();
        assert!((w_inv - 4047.0 / 3995.0).abs() < 1e-12);
    }

    #[test]
    fn weight_of_missing_subgroup_errors() {
        let chunks = population(10);
        let counts = GroupCounts::from_chunks(&chunks);
        // age 60 -> decade 3 exists? population ages are 19..=60 by (i*7)%42+19
        // use a gender-age pair that cannot exist: all speakers aged <= 60,
        // query an empty decade via a fabricated age beyond the population.
        let missing = sample_weight(Label::H, Gender::M, 59, &counts, WeightMode::Literal);
        let decade3_m = counts.gender_age.contains_key(&(Gender::M, 3));
        assert_eq!(missing.is_err(), !decade3_m);
    }

    #[test]
    fn balanced_groups_weigh_one() {
        let mut chunks = Vec::new();
        let mut sp = 0;
        for label in [Label::H, Label::P] {
            for gender in [Gender::M, Gender::F] {
                for age in [25, 35] {
                    chunks.push(chunk(sp, 0, label, gender, age));
                    sp += 1;
                }
            }
        }
        let counts = GroupCounts::from_chunks(&chunks);
        for c in &chunks {
            let w =
                sample_weight(c.label, c.gender, c.age, &counts, WeightMode::Literal).unwrap();
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn weights_monotone_in_subgroup_count() {
        let mut counts = GroupCounts {
            class: BTreeMap::new(),
            gender: BTreeMap::new(),
            gender_age: BTreeMap::new(),
        };
        counts.class.insert(Label::H, 100);
        counts.class.insert(Label::P, 300);
        counts.gender.insert(Gender::M, 200);
        counts.gender.insert(Gender::F, 200);
        counts.gender_age.insert((Gender::M, 0), 120);
        counts.gender_age.insert((Gender::F, 0), 80);
        let w_small = sample_weight(Label::H, Gender::F, 25, &counts, WeightMode::Literal).unwrap();
        let w_large = sample_weight(Label::P, Gender::M, 25, &counts, WeightMode::Literal).unwrap();
        assert!(w_small < w_large);
        assert!(w_small > 0.0 && w_large <= 1.0);
    }

    #[test]
    fn manifest_round_trips_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![RecordingMeta {
            id: "r1".into(),
            database: "synth".into(),
            speaker_id: "s1".into(),
            gender: Gender::F,
            age: 33,
            label: Label::P,
            pathologies: vec!["jitter_excess".into()],
            duration_s: 1.5,
            path: PathBuf::from("wav/r1.wav"),
        }];
        let path = dir.path().join("m.jsonl");
        write_manifest_file(&path, &rows).unwrap();
        assert_eq!(read_manifest_file(&path).unwrap(), rows);
    }

    #[test]
    fn feature_table_round_trips_csv() {
        let dir = tempfile::tempdir().unwrap();
        let t = FeatureTable {
            feature_names: vec!["af_f0_mean".into(), "af_f0_std".into()],
            rows: vec![FeatureRow {
                chunk_id: "c1".into(),
                recording_id: "r1".into(),
                speaker_id: "s1".into(),
                set: "unsplit".into(),
                weight: 1.0,
                label: Label::H,
                values: vec![150.123456789012, -3.5e-7],
            }],
        };
        let path = dir.path().join("f.csv");
        t.save_csv(&path).unwrap();
        let back = FeatureTable::load_csv(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scaler_centers_training_columns() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 10.0], vec![3.0, 30.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Scaler::fit(&refs, &[0, 1]).unwrap();
        let mut r = vec![2.0, 20.0];
        s.apply(&mut r);
        assert_eq!(r, vec![0.0, 0.0]);
        let mut r2 = vec![3.0, 10.0];
        s.apply(&mut r2);
        assert!((r2[0] - 1.0).abs() < 1e-12);
        assert!((r2[1] + 1.0).abs() < 1e-12);
    }
}
