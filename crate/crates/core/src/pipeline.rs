//! End-to-end pipeline stages: corpus synthesis, preprocessing, feature
//! extraction, splitting, training, tuning, evaluation, ablation, corpus
//! statistics, and report rendering.
//!
//! Every stage reads and writes plain files under one working directory,
//! so any prefix of the pipeline can be rerun or inspected in isolation:
//!
//! ```text
//! manifest.jsonl  wav/            synthesized corpus
//! chunks.jsonl    chunks/         admitted 750 ms chunks
//! features.csv                    tabular features (af + mfcc stats)
//! mfcc.csv spec.csv raw.csv       matrix sidecars, one row per chunk
//! split.json                      test chunks + 10 development folds
//! model_*.json report_*.{json,txt} cm_*.csv leaderboard_*.csv ...
//! ```
//!
//! All randomness is derived from the stage seed, work is parallelized
//! with order-preserving collects, and reruns are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audio::{self, Signal, WORKING_RATE};
use crate::corpus::{
    read_chunks_file, read_manifest_file, sample_weight, stratified_split, write_chunks_file,
    ChunkMeta, FeatureRow, FeatureTable, GroupCounts, Label, MatrixTable, RecordingMeta, Split,
    WeightMode,
};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, Report, Subset};
use crate::features::dysphonia;
use crate::features::spectral::{self, MFCC_COEFFS, SPEC_BINS, SPEC_FRAMES};
use crate::models::net::{self, Net, NetConfig, TrainOptions};
use crate::models::{gbt, iforest};
use crate::preprocess;
use crate::rng::mix;
use crate::synth;
use crate::tuner::{self, FoldScore, ParamDraw, TrialSummary};
use crate::{Real, TrainReal};

/// MFCC frames per 750 ms chunk with the 25 ms / 10 ms framing.
pub const MFCC_FRAMES: usize = 74;

pub const N_FOLDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Gbt,
    Iforest,
    Densenet,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gbt => "gbt",
            ModelKind::Iforest => "iforest",
            ModelKind::Densenet => "densenet",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbt" => Ok(ModelKind::Gbt),
            "iforest" => Ok(ModelKind::Iforest),
            "densenet" => Ok(ModelKind::Densenet),
            other => Err(Error::InvalidParam(format!("unknown model {other}"))),
        }
    }
}

/// What the features stage computes and writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractSet {
    /// 122 tabular columns plus the MFCC and spectrogram sidecars.
    All,
    Af,
    AfBase,
    AfStats,
    Mfcc,
    Spec,
    Raw,
}

impl FromStr for ExtractSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ExtractSet::All),
            "af" => Ok(ExtractSet::Af),
            "af-base" => Ok(ExtractSet::AfBase),
            "af-stats" => Ok(ExtractSet::AfStats),
            "mfcc" => Ok(ExtractSet::Mfcc),
            "spec" => Ok(ExtractSet::Spec),
            "raw" => Ok(ExtractSet::Raw),
            other => Err(Error::InvalidParam(format!("unknown feature set {other}"))),
        }
    }
}

// ---------------------------------------------------------------------
// synth / preprocess / features / split
// ---------------------------------------------------------------------

pub fn run_synth(
    n_healthy: usize,
    n_pathological: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<RecordingMeta>> {
    synth::synth_corpus(n_healthy, n_pathological, seed, out)
}

/// Chunk every admitted recording under `root` into `out/chunks/` and
/// write `out/chunks.jsonl`.
pub fn run_preprocess(root: &Path, out: &Path) -> Result<Vec<ChunkMeta>> {
    let manifest = crate::corpus::build_manifest(root)?;
    let chunk_dir = out.join("chunks");
    fs::create_dir_all(&chunk_dir).map_err(|e| Error::io(&chunk_dir, e))?;

    let per_rec: Vec<Vec<ChunkMeta>> = manifest
        .admitted
        .par_iter()
        .map(|rec| -> Result<Vec<ChunkMeta>> {
            let sig: Signal<Real> = audio::read_wav(root.join(&rec.path))?;
            let sig = if sig.rate == WORKING_RATE {
                sig
            } else {
                audio::resample(&sig, WORKING_RATE)
            };
            let chunks = preprocess::chunk(&sig, &rec.id)?;
            let mut metas = Vec::with_capacity(chunks.len());
            for (i, c) in chunks.into_iter().enumerate() {
                let chunk_id = format!("{}_c{:02}", rec.id, i);
                let rel = format!("chunks/{chunk_id}.wav");
                audio::write_wav(
                    out.join(&rel),
                    &Signal::new(c.samples, WORKING_RATE),
                )?;
                metas.push(ChunkMeta {
                    chunk_id,
                    recording_id: rec.id.clone(),
                    speaker_id: rec.speaker_id.clone(),
                    gender: rec.gender,
                    age: rec.age,
                    label: rec.label,
                    offset_s: c.offset_s,
                    path: rel.into(),
                });
            }
            Ok(metas)
        })
        .collect::<Result<_>>()?;

    let chunks: Vec<ChunkMeta> = per_rec.into_iter().flatten().collect();
    if chunks.is_empty() {
        return Err(Error::Data("no admissible recordings produced chunks".into()));
    }
    write_chunks_file(out.join("chunks.jsonl"), &chunks)?;
    Ok(chunks)
}

struct ChunkFeatures {
    af: Option<Vec<f64>>,
    mfcc_stats: Option<Vec<f64>>,
    mfcc_row: Option<Vec<f64>>,
    spec_row: Option<Vec<f64>>,
    raw_row: Option<Vec<f64>>,
}

/// Extract the requested representation for every chunk in
/// `dir/chunks.jsonl`. `all` writes the 122-column table plus MFCC and
/// spectrogram sidecars; `spec`/`raw` write only their matrix.
pub fn run_features(dir: &Path, set: ExtractSet) -> Result<()> {
    let chunks = read_chunks_file(dir.join("chunks.jsonl"))?;
    let needs_af = matches!(
        set,
        ExtractSet::All | ExtractSet::Af | ExtractSet::AfBase | ExtractSet::AfStats
    );
    let needs_stats = matches!(set, ExtractSet::All | ExtractSet::Mfcc);
    let needs_mfcc = set == ExtractSet::All;
    let needs_spec = matches!(set, ExtractSet::All | ExtractSet::Spec);
    let needs_raw = set == ExtractSet::Raw;

    let rows: Vec<ChunkFeatures> = chunks
        .par_iter()
        .map(|c| -> Result<ChunkFeatures> {
            let ctx = |e: Error| Error::Data(format!("chunk {}: {e}", c.chunk_id));
            let sig: Signal<Real> = audio::read_wav(dir.join(&c.path))?;
            if sig.samples.len() != preprocess::CHUNK_SAMPLES {
                return Err(Error::Data(format!(
                    "chunk {} has {} samples, expected {}",
                    c.chunk_id,
                    sig.samples.len(),
                    preprocess::CHUNK_SAMPLES
                )));
            }
            let af = if needs_af {
                Some(dysphonia::af_vector(&sig.samples, sig.rate).map_err(ctx)?)
            } else {
                None
            };
            let (mfcc_stats, mfcc_row) = if needs_stats || needs_mfcc {
                let block = spectral::mfcc(&sig.samples, sig.rate).map_err(ctx)?;
                let mut stats = block.means.clone();
                stats.extend(block.stds.iter().copied());
                let row = needs_mfcc.then(|| block.matrix.iter().copied().collect());
                (needs_stats.then_some(stats), row)
            } else {
                (None, None)
            };
            let spec_row = if needs_spec {
                let block = spectral::spectrogram(&sig.samples).map_err(ctx)?;
                Some(block.matrix.iter().copied().collect())
            } else {
                None
            };
            let raw_row = needs_raw.then(|| audio::minmax_normalize(&sig.samples));
            Ok(ChunkFeatures {
                af,
                mfcc_stats,
                mfcc_row,
                spec_row,
                raw_row,
            })
        })
        .collect::<Result<_>>()?;

    if needs_af || needs_stats {
        let af_names = dysphonia::feature_names();
        let mut names = Vec::new();
        let mut keep_idx = Vec::new();
        if needs_af {
            let subset = match set {
                ExtractSet::AfBase => Subset::AfBase,
                ExtractSet::AfStats => Subset::AfStats,
                _ => Subset::Af,
            };
            keep_idx = eval::subset_columns(&af_names, subset)?;
            names.extend(keep_idx.iter().map(|&i| af_names[i].clone()));
        }
        if needs_stats {
            names.extend(spectral::mfcc_stat_names());
        }
        let table_rows: Vec<FeatureRow> = chunks
            .iter()
            .zip(&rows)
            .map(|(c, f)| {
                let mut values = Vec::with_capacity(names.len());
                if let Some(af) = &f.af {
                    values.extend(keep_idx.iter().map(|&i| af[i]));
                }
                if let Some(stats) = &f.mfcc_stats {
                    values.extend(stats.iter().copied());
                }
                FeatureRow {
                    chunk_id: c.chunk_id.clone(),
                    recording_id: c.recording_id.clone(),
                    speaker_id: c.speaker_id.clone(),
                    set: "unsplit".into(),
                    weight: 1.0,
                    label: c.label,
                    values,
                }
            })
            .collect();
        let table = FeatureTable {
            feature_names: names,
            rows: table_rows,
        };
        table.save_csv(dir.join("features.csv"))?;
    }

    let write_matrix = |file: &str, pick: &dyn Fn(&ChunkFeatures) -> Option<&Vec<f64>>,
                        n_cols: usize|
     -> Result<()> {
        let values: Vec<Vec<f64>> = rows
            .iter()
            .map(|f| pick(f).expect("matrix row computed").clone())
            .collect();
        let table = MatrixTable {
            chunk_ids: chunks.iter().map(|c| c.chunk_id.clone()).collect(),
            n_cols,
            values,
        };
        table.save_csv(dir.join(file))
    };
    if needs_mfcc {
        write_matrix("mfcc.csv", &|f| f.mfcc_row.as_ref(), MFCC_COEFFS * MFCC_FRAMES)?;
    }
    if needs_spec {
        write_matrix("spec.csv", &|f| f.spec_row.as_ref(), SPEC_BINS * SPEC_FRAMES)?;
    }
    if needs_raw {
        write_matrix("raw.csv", &|f| f.raw_row.as_ref(), preprocess::CHUNK_SAMPLES)?;
    }
    Ok(())
}

/// Per-chunk (set, weight) assignment: "test" with weight 1, or "fold_k"
/// with the balance weight computed over the development distribution.
pub fn chunk_assignments(
    split: &Split,
    chunks: &[ChunkMeta],
) -> Result<BTreeMap<String, (String, f64)>> {
    let by_id: BTreeMap<&str, &ChunkMeta> = chunks
        .iter()
        .map(|c| (c.chunk_id.as_str(), c))
        .collect();
    let meta = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Split(format!("split references unknown chunk {id}")))
    };
    let dev_metas: Vec<&ChunkMeta> = split
        .development()
        .iter()
        .map(|id| meta(id))
        .collect::<Result<_>>()?;
    let counts = GroupCounts::from_chunks(dev_metas.iter().copied());

    let mut out = BTreeMap::new();
    for id in &split.test {
        meta(id)?;
        out.insert(id.clone(), ("test".to_string(), 1.0));
    }
    for (k, fold) in split.folds.iter().enumerate() {
        for id in fold {
            let m = meta(id)?;
            let w = sample_weight(m.label, m.gender, m.age, &counts, WeightMode::Literal)?;
            out.insert(id.clone(), (format!("fold_{k}"), w));
        }
    }
    Ok(out)
}

/// Draw the speaker-disjoint split, save `split.json`, and rewrite the
/// set/weight columns of `features.csv` when it exists.
pub fn run_split(dir: &Path, seed: u64, test_per_class: usize) -> Result<Split> {
    let chunks = read_chunks_file(dir.join("chunks.jsonl"))?;
    let split = stratified_split(&chunks, seed, test_per_class)?;
    split.save(dir.join("split.json"))?;
    let assignments = chunk_assignments(&split, &chunks)?;

    let features_path = dir.join("features.csv");
    if features_path.exists() {
        let mut table = FeatureTable::load_csv(&features_path)?;
        for row in table.rows.iter_mut() {
            let (set, weight) = assignments.get(&row.chunk_id).ok_or_else(|| {
                Error::Split(format!("chunk {} missing from split", row.chunk_id))
            })?;
            row.set = set.clone();
            row.weight = *weight;
        }
        table.save_csv(&features_path)?;
    } else {
        log::info!("features.csv not present yet; split saved without table rewrite");
    }
    Ok(split)
}

// ---------------------------------------------------------------------
// tabular model plumbing
// ---------------------------------------------------------------------

fn label_of(pathological: bool) -> Label {
    if pathological {
        Label::P
    } else {
        Label::H
    }
}

/// Rows of a split feature table organized for grouped cross-validation.
struct TabularTask {
    cols: Vec<usize>,
    /// Row indices per fold.
    folds: Vec<Vec<usize>>,
    test: Vec<usize>,
    table: FeatureTable,
}

impl TabularTask {
    fn prepare(table: FeatureTable, subset: Subset) -> Result<TabularTask> {
        let cols = eval::subset_columns(&table.feature_names, subset)?;
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); N_FOLDS];
        let mut test = Vec::new();
        for (i, row) in table.rows.iter().enumerate() {
            match row.set.as_str() {
                "test" => test.push(i),
                s if s.starts_with("fold_") => {
                    let k: usize = s[5..]
                        .parse()
                        .map_err(|_| Error::Data(format!("bad set column {s:?}")))?;
                    if k >= N_FOLDS {
                        return Err(Error::Data(format!("fold {k} out of range")));
                    }
                    folds[k].push(i);
                }
                other => {
                    return Err(Error::Data(format!(
                        "row {} has set {other:?}; run the split stage first",
                        row.chunk_id
                    )))
                }
            }
        }
        if test.is_empty() || folds.iter().all(|f| f.is_empty()) {
            return Err(Error::Data("split produced no usable rows".into()));
        }
        Ok(TabularTask {
            cols,
            folds,
            test,
            table,
        })
    }

    fn development(&self) -> Vec<usize> {
        let mut dev: Vec<usize> = self.folds.iter().flatten().copied().collect();
        dev.sort_unstable();
        dev
    }

    /// Fold-k training rows: all other folds, minus fold-k speakers.
    fn fold_train(&self, k: usize) -> Vec<usize> {
        let blocked: BTreeSet<&str> = self.folds[k]
            .iter()
            .map(|&i| self.table.rows[i].speaker_id.as_str())
            .collect();
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .filter(|&i| !blocked.contains(self.table.rows[i].speaker_id.as_str()))
            .collect()
    }

    fn matrix(&self, rows: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<f64>, Vec<Label>) {
        let mut x = Array2::zeros((rows.len(), self.cols.len()));
        let mut y = Vec::with_capacity(rows.len());
        let mut w = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let row = &self.table.rows[i];
            for (c, &col) in self.cols.iter().enumerate() {
                x[[r, c]] = row.values[col];
            }
            y.push(row.label.index() as f64);
            w.push(row.weight);
            labels.push(row.label);
        }
        (x, y, w, labels)
    }
}

enum FittedTab {
    Gbt(gbt::GbtModel),
    Iforest(iforest::IsoForest),
}

impl FittedTab {
    fn predict_labels(&self, x: &Array2<f64>) -> Result<Vec<Label>> {
        match self {
            FittedTab::Gbt(m) => Ok(m
                .predict(x)?
                .into_iter()
                .map(|p| label_of(p >= 0.5))
                .collect()),
            FittedTab::Iforest(m) => {
                Ok(m.classify(x)?.into_iter().map(label_of).collect())
            }
        }
    }

    fn to_json(&self) -> Result<String> {
        match self {
            FittedTab::Gbt(m) => m.to_json(),
            FittedTab::Iforest(m) => m.to_json(),
        }
    }
}

fn fit_tab(
    kind: ModelKind,
    draw: &ParamDraw,
    x: &Array2<f64>,
    y: &[f64],
    w: &[f64],
    seed: u64,
) -> Result<FittedTab> {
    match kind {
        ModelKind::Gbt => {
            let params = tuner::gbt_params(draw)?;
            Ok(FittedTab::Gbt(gbt::train_gbt(x, y, w, &params, seed)?))
        }
        ModelKind::Iforest => {
            let params = tuner::iforest_params(draw)?;
            Ok(FittedTab::Iforest(iforest::fit(x, &params, seed)?))
        }
        ModelKind::Densenet => Err(Error::InvalidParam(
            "densenet is not tuned with the tabular search".into(),
        )),
    }
}

// ---------------------------------------------------------------------
// evaluation artifacts
// ---------------------------------------------------------------------

/// Everything one evaluation produces; stored as `report_{model}.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub model: String,
    pub features: String,
    pub cm: ConfusionMatrix,
    pub report: Report,
}

impl EvalArtifact {
    pub fn build(
        model: &str,
        features: &str,
        y_true: &[Label],
        y_pred: &[Label],
    ) -> Result<EvalArtifact> {
        let cm = eval::confusion(y_true, y_pred)?;
        Ok(EvalArtifact {
            model: model.to_string(),
            features: features.to_string(),
            cm,
            report: eval::report(&cm)?,
        })
    }

    pub fn test_f1(&self) -> f64 {
        self.report.average.f1
    }

    pub fn render(&self) -> String {
        let name = format!("{} ({})", self.model, self.features);
        format!(
            "{}\n{}",
            eval::render_cm(&self.cm, &name),
            eval::render_report(&self.report, &name)
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EvalArtifact> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: EvalArtifact = serde_json::from_str(&text)?;
        for (i, m) in artifact.report.per_class.iter().enumerate() {
            if m.support == 0 {
                return Err(Error::Data(format!(
                    "report is missing class {}",
                    if i == 0 { "H" } else { "P" }
                )));
            }
        }
        Ok(artifact)
    }
}

fn write_artifacts(dir: &Path, kind: ModelKind, artifact: &EvalArtifact) -> Result<()> {
    artifact.save(&dir.join(format!("report_{}.json", kind.name())))?;
    let txt = dir.join(format!("report_{}.txt", kind.name()));
    fs::write(&txt, artifact.render()).map_err(|e| Error::io(&txt, e))?;
    let cm = dir.join(format!("cm_{}.csv", kind.name()));
    fs::write(&cm, eval::cm_csv(&artifact.cm)).map_err(|e| Error::io(&cm, e))?;
    Ok(())
}

// ---------------------------------------------------------------------
// train / tune / evaluate
// ---------------------------------------------------------------------

/// Start from `base`'s JSON form and overlay the keys of `config` (which
/// must all exist in the base); flags-over-config precedence is the
/// caller's job.
pub fn merge_config<T: Serialize + DeserializeOwned>(base: &T, config: Option<&str>) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(text) = config {
        let overlay: serde_json::Value = serde_json::from_str(text)?;
        let (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) =
            (&mut value, overlay)
        else {
            return Err(Error::InvalidParam("config must be a JSON object".into()));
        };
        for (key, val) in overlay_map {
            if !base_map.contains_key(&key) {
                return Err(Error::InvalidParam(format!("unknown config key {key}")));
            }
            base_map.insert(key, val);
        }
    }
    Ok(serde_json::from_value(value)?)
}

/// Densenet knobs accepted via `--config`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NetRunParams {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth_rate: usize,
    pub initial_filters: usize,
    pub dropout: f64,
    pub l2: f64,
    pub kernel: usize,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
}

impl Default for NetRunParams {
    fn default() -> Self {
        let net = NetConfig::new(1, 1);
        let opt = TrainOptions::default();
        NetRunParams {
            blocks: net.blocks,
            layers_per_block: net.layers_per_block,
            growth_rate: net.growth_rate,
            initial_filters: net.initial_filters,
            dropout: net.dropout,
            l2: net.l2,
            kernel: net.kernel,
            epochs: opt.epochs,
            patience: opt.patience,
            batch_size: opt.batch_size,
            lr0: opt.lr0,
            lr_decay: opt.lr_decay,
        }
    }
}

fn net_shape(features: &str) -> Result<(usize, usize, &'static str)> {
    match features {
        "mfcc" => Ok((MFCC_COEFFS, MFCC_FRAMES, "mfcc.csv")),
        "spec" => Ok((SPEC_BINS, SPEC_FRAMES, "spec.csv")),
        "raw" => Ok((1, preprocess::CHUNK_SAMPLES, "raw.csv")),
        other => Err(Error::InvalidParam(format!(
            "densenet expects mfcc|spec|raw features, got {other}"
        ))),
    }
}

struct NetData {
    train: net::Dataset<TrainReal>,
    valid: net::Dataset<TrainReal>,
    test: net::Dataset<TrainReal>,
    test_labels: Vec<Label>,
}

/// Assemble densenet datasets: folds 1..9 train, fold 0 validates early
/// stopping (minus its speakers from training), test held out.
fn net_data(dir: &Path, features: &str) -> Result<(NetData, usize, usize)> {
    let (c_n, t_n, file) = net_shape(features)?;
    let matrix = MatrixTable::load_csv(dir.join(file))?;
    if matrix.n_cols != c_n * t_n {
        return Err(Error::DimensionMismatch {
            expected: c_n * t_n,
            got: matrix.n_cols,
        });
    }
    let chunks = read_chunks_file(dir.join("chunks.jsonl"))?;
    let split = Split::load(dir.join("split.json"))?;
    let assignments = chunk_assignments(&split, &chunks)?;
    let meta: BTreeMap<&str, &ChunkMeta> = chunks
        .iter()
        .map(|c| (c.chunk_id.as_str(), c))
        .collect();

    let valid_speakers: BTreeSet<&str> = split.folds[0]
        .iter()
        .filter_map(|id| meta.get(id.as_str()).map(|m| m.speaker_id.as_str()))
        .collect();

    let mut sets: BTreeMap<&str, (Vec<usize>, Vec<Label>, Vec<f64>)> = BTreeMap::new();
    for (row, id) in matrix.chunk_ids.iter().enumerate() {
        let m = meta
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("matrix row {id} missing from chunks")))?;
        let (set, weight) = assignments
            .get(id)
            .ok_or_else(|| Error::Split(format!("chunk {id} missing from split")))?;
        let bucket = if set == "test" {
            "test"
        } else if set == "fold_0" {
            "valid"
        } else if valid_speakers.contains(m.speaker_id.as_str()) {
            continue;
        } else {
            "train"
        };
        let entry = sets.entry(bucket).or_default();
        entry.0.push(row);
        entry.1.push(m.label);
        entry.2.push(*weight);
    }

    let build = |key: &str| -> Result<(net::Dataset<TrainReal>, Vec<Label>)> {
        let (rows, labels, weights) = sets
            .get(key)
            .ok_or_else(|| Error::Data(format!("no {key} rows for densenet")))?;
        let mut x = net::Tensor::zeros(&[rows.len(), c_n, t_n]);
        for (r, &row) in rows.iter().enumerate() {
            for (j, &v) in matrix.values[row].iter().enumerate() {
                x.data[r * c_n * t_n + j] = v as TrainReal;
            }
        }
        let y: Vec<f64> = labels.iter().map(|l| l.index() as f64).collect();
        Ok((
            net::Dataset {
                x,
                y,
                w: weights.clone(),
            },
            labels.clone(),
        ))
    };
    let (train, _) = build("train")?;
    let (valid, _) = build("valid")?;
    let (test, test_labels) = build("test")?;
    Ok((
        NetData {
            train,
            valid,
            test,
            test_labels,
        },
        c_n,
        t_n,
    ))
}

/// Train one model with fixed (default or config-supplied) parameters on
/// the development set and evaluate it on the test set.
pub fn run_train(
    dir: &Path,
    kind: ModelKind,
    features: &str,
    seed: u64,
    config: Option<&str>,
) -> Result<EvalArtifact> {
    let artifact = match kind {
        ModelKind::Gbt | ModelKind::Iforest => {
            let subset = Subset::from_str(features)?;
            let table = FeatureTable::load_csv(dir.join("features.csv"))?;
            let task = TabularTask::prepare(table, subset)?;
            let (x_dev, y_dev, w_dev, _) = task.matrix(&task.development());
            let model = match kind {
                ModelKind::Gbt => {
                    let params: gbt::GbtParams =
                        merge_config(&gbt::GbtParams::default(), config)?;
                    FittedTab::Gbt(gbt::train_gbt(&x_dev, &y_dev, &w_dev, &params, mix(seed, 100))?)
                }
                _ => {
                    let params: iforest::IfParams =
                        merge_config(&iforest::IfParams::default(), config)?;
                    FittedTab::Iforest(iforest::fit(&x_dev, &params, mix(seed, 100))?)
                }
            };
            let model_path = dir.join(format!("model_{}.json", kind.name()));
            fs::write(&model_path, model.to_json()?).map_err(|e| Error::io(&model_path, e))?;
            let (x_test, _, _, test_labels) = task.matrix(&task.test);
            let preds = model.predict_labels(&x_test)?;
            EvalArtifact::build(kind.name(), features, &test_labels, &preds)?
        }
        ModelKind::Densenet => {
            let params: NetRunParams = merge_config(&NetRunParams::default(), config)?;
            let (data, c_n, t_n) = net_data(dir, features)?;
            let cfg = NetConfig {
                blocks: params.blocks,
                layers_per_block: params.layers_per_block,
                growth_rate: params.growth_rate,
                initial_filters: params.initial_filters,
                dropout: params.dropout,
                l2: params.l2,
                kernel: params.kernel,
                input_channels: c_n,
                input_time: t_n,
            };
            let mut model: Net<TrainReal> = net::build(&cfg, mix(seed, 200))?;
            let opts = TrainOptions {
                epochs: params.epochs,
                patience: params.patience,
                batch_size: params.batch_size,
                lr0: params.lr0,
                lr_decay: params.lr_decay,
                seed: mix(seed, 201),
            };
            let history = net::train(&mut model, &data.train, &data.valid, &opts)?;
            log::info!(
                "densenet: {} epochs, best valid accuracy {:.3} at epoch {}",
                history.train_loss.len(),
                history.best_valid_acc,
                history.best_epoch
            );
            let model_path = dir.join("model_densenet.json");
            fs::write(&model_path, model.to_json()?).map_err(|e| Error::io(&model_path, e))?;
            let hist_path = dir.join("history_densenet.json");
            fs::write(&hist_path, serde_json::to_string_pretty(&history)?)
                .map_err(|e| Error::io(&hist_path, e))?;
            let probs = model.predict(&data.test.x, opts.batch_size)?;
            let preds: Vec<Label> = probs.iter().map(|&p| label_of(p >= 0.5)).collect();
            EvalArtifact::build("densenet", features, &data.test_labels, &preds)?
        }
    };
    write_artifacts(dir, kind, &artifact)?;
    Ok(artifact)
}

pub struct TuneOutcome {
    pub trials: Vec<TrialSummary>,
    pub best: TrialSummary,
    pub artifact: EvalArtifact,
}

/// Tabular tune/refit core shared by `run_tune` and `run_ablate`.
fn tune_tabular(
    task: &TabularTask,
    kind: ModelKind,
    n_iter: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    let space = match kind {
        ModelKind::Gbt => tuner::gbt_space(),
        ModelKind::Iforest => tuner::iforest_space(),
        ModelKind::Densenet => {
            return Err(Error::InvalidParam("tune supports gbt|iforest".into()))
        }
    };
    // fold data prepared once: (train parts, valid parts)
    type FoldData = (
        (Array2<f64>, Vec<f64>, Vec<f64>, Vec<Label>),
        (Array2<f64>, Vec<Label>),
    );
    let fold_data: Vec<FoldData> = (0..N_FOLDS)
        .map(|k| {
            let train = task.matrix(&task.fold_train(k));
            let (xv, _, _, lv) = task.matrix(&task.folds[k]);
            (train, (xv, lv))
        })
        .collect();

    let trials = tuner::random_search(&space, n_iter, N_FOLDS, seed, |trial, draw, fold| {
        let ((x_tr, y_tr, w_tr, l_tr), (x_va, l_va)) = &fold_data[fold];
        let model_seed = mix(seed, 4_000_000 + (trial as u64) * 16 + fold as u64);
        let model = fit_tab(kind, draw, x_tr, y_tr, w_tr, model_seed)?;
        let f1_train = eval::confusion(l_tr, &model.predict_labels(x_tr)?)?.accuracy();
        let f1_valid = eval::confusion(l_va, &model.predict_labels(x_va)?)?.accuracy();
        Ok(FoldScore { f1_train, f1_valid })
    });

    let best_idx = tuner::best_trial(&trials)?;
    let best = trials[best_idx].clone();
    let (x_dev, y_dev, w_dev, _) = task.matrix(&task.development());
    let refit_seed = mix(seed, 5_000_000 + best.trial as u64);
    let model = fit_tab(kind, &best.params, &x_dev, &y_dev, &w_dev, refit_seed)?;
    let (x_test, _, _, test_labels) = task.matrix(&task.test);
    let preds = model.predict_labels(&x_test)?;
    let artifact = EvalArtifact::build(kind.name(), "", &test_labels, &preds)?;
    Ok(TuneOutcome {
        trials,
        best,
        artifact,
    })
}

/// Randomized search over the model's published space, leaderboard CSV,
/// refit on the development set, and test evaluation.
pub fn run_tune(
    dir: &Path,
    kind: ModelKind,
    features: &str,
    n_iter: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    let subset = Subset::from_str(features)?;
    let table = FeatureTable::load_csv(dir.join("features.csv"))?;
    let task = TabularTask::prepare(table, subset)?;
    let mut outcome = tune_tabular(&task, kind, n_iter, seed)?;
    outcome.artifact.features = features.to_string();

    let lb = dir.join(format!("leaderboard_{}.csv", kind.name()));
    fs::write(&lb, tuner::leaderboard_csv(&outcome.trials)?).map_err(|e| Error::io(&lb, e))?;
    let bp = dir.join(format!("best_params_{}.json", kind.name()));
    fs::write(&bp, serde_json::to_string_pretty(&outcome.best)?)
        .map_err(|e| Error::io(&bp, e))?;

    // persist the refit model alongside the reports
    let (x_dev, y_dev, w_dev, _) = task.matrix(&task.development());
    let refit_seed = mix(seed, 5_000_000 + outcome.best.trial as u64);
    let model = fit_tab(kind, &outcome.best.params, &x_dev, &y_dev, &w_dev, refit_seed)?;
    let model_path = dir.join(format!("model_{}.json", kind.name()));
    fs::write(&model_path, model.to_json()?).map_err(|e| Error::io(&model_path, e))?;

    write_artifacts(dir, kind, &outcome.artifact)?;
    Ok(outcome)
}

/// Re-evaluate a saved model on the test rows.
pub fn run_evaluate(dir: &Path, kind: ModelKind, features: &str) -> Result<EvalArtifact> {
    let artifact = match kind {
        ModelKind::Gbt | ModelKind::Iforest => {
            let subset = Subset::from_str(features)?;
            let table = FeatureTable::load_csv(dir.join("features.csv"))?;
            let task = TabularTask::prepare(table, subset)?;
            let text_path = dir.join(format!("model_{}.json", kind.name()));
            let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
            let model = match kind {
                ModelKind::Gbt => FittedTab::Gbt(gbt::GbtModel::from_json(&text)?),
                _ => FittedTab::Iforest(iforest::IsoForest::from_json(&text)?),
            };
            let (x_test, _, _, test_labels) = task.matrix(&task.test);
            let preds = model.predict_labels(&x_test)?;
            EvalArtifact::build(kind.name(), features, &test_labels, &preds)?
        }
        ModelKind::Densenet => {
            let (data, _, _) = net_data(dir, features)?;
            let text_path = dir.join("model_densenet.json");
            let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
            let model: Net<TrainReal> = Net::from_json(&text)?;
            let probs = model.predict(&data.test.x, 32)?;
            let preds: Vec<Label> = probs.iter().map(|&p| label_of(p >= 0.5)).collect();
            EvalArtifact::build("densenet", features, &data.test_labels, &preds)?
        }
    };
    write_artifacts(dir, kind, &artifact)?;
    Ok(artifact)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub subset: String,
    pub columns: usize,
    pub f1_cv_train: f64,
    pub f1_cv_valid: f64,
    pub f1_test: f64,
}

/// One GBT search per feature subset; writes `ablation.csv`.
pub fn run_ablate(
    dir: &Path,
    subsets: &[Subset],
    n_iter: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut seen = BTreeSet::new();
    let mut ordered = Vec::new();
    for &s in subsets {
        if seen.insert(s.name()) {
            ordered.push(s);
        } else {
            log::warn!("duplicate subset {} ignored", s.name());
        }
    }
    let table = FeatureTable::load_csv(dir.join("features.csv"))?;
    let mut rows = Vec::with_capacity(ordered.len());
    for subset in ordered {
        let task = TabularTask::prepare(table.clone(), subset)?;
        let outcome = tune_tabular(&task, ModelKind::Gbt, n_iter, mix(seed, 7_000_000))?;
        rows.push(AblationRow {
            subset: subset.name().to_string(),
            columns: task.cols.len(),
            f1_cv_train: outcome.best.f1_train_mean,
            f1_cv_valid: outcome.best.f1_valid_mean,
            f1_test: outcome.artifact.test_f1(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subset", "columns", "f1_cv_train", "f1_cv_valid", "f1_test"])?;
    for r in &rows {
        w.write_record([
            r.subset.clone(),
            r.columns.to_string(),
            r.f1_cv_train.to_string(),
            r.f1_cv_valid.to_string(),
            r.f1_test.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let path = dir.join("ablation.csv");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

// ---------------------------------------------------------------------
// stats / report
// ---------------------------------------------------------------------

/// Corpus composition counts (per label, gender, age decade, pathology
/// tag) written as a long-format CSV to `out/stats.csv`.
pub fn run_stats(data: &Path, out: &Path) -> Result<Vec<(String, String, usize)>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let recs = read_manifest_file(data.join("manifest.jsonl"))?;
    if recs.is_empty() {
        return Err(Error::Data("empty manifest".into()));
    }
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let decade_name = |d: u8| match d {
        0 => "0-29",
        1 => "30-39",
        2 => "40-49",
        _ => "50+",
    };
    for r in &recs {
        *counts
            .entry(("label".into(), r.label.to_string()))
            .or_insert(0) += 1;
        *counts
            .entry(("gender".into(), r.gender.to_string()))
            .or_insert(0) += 1;
        *counts
            .entry((
                "age_decade".into(),
                decade_name(crate::corpus::age_decade(r.age)).to_string(),
            ))
            .or_insert(0) += 1;
        for p in &r.pathologies {
            *counts.entry(("pathology".into(), p.clone())).or_insert(0) += 1;
        }
    }
    let rows: Vec<(String, String, usize)> = counts
        .into_iter()
        .map(|((cat, key), n)| (cat, key, n))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "key", "count"])?;
    for (cat, key, n) in &rows {
        w.write_record([cat.clone(), key.clone(), n.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let path = out.join("stats.csv");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Render a stored evaluation in the standard table layout.
pub fn run_report(report_path: &Path) -> Result<String> {
    Ok(EvalArtifact::load(report_path)?.render())
}

/// Resolved artifact directory helper for callers that take a base and
/// an optional override.
pub fn resolve_out(base: &Path, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| base.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vpd-pipeline-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    /// Tiny corpus shared by the stage tests: 12 + 12 speakers.
    fn small_corpus(dir: &Path) {
        run_synth(12, 12, 77, dir).unwrap();
        run_preprocess(dir, dir).unwrap();
    }

    /// Largest per-class test size (at most a quarter of the smaller
    /// class) that the exact-fill splitter can reach on this corpus.
    fn feasible_target(chunks: &[ChunkMeta], seed: u64) -> usize {
        let h = chunks.iter().filter(|c| c.label == Label::H).count();
        let p = chunks.len() - h;
        let mut t = h.min(p) / 4;
        while t > 1 && stratified_split(chunks, seed, t).is_err() {
            t -= 1;
        }
        t
    }

    #[test]
    fn preprocess_writes_chunks_and_metadata() {
        let dir = tmp("pre");
        small_corpus(&dir);
        let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
        assert!(!chunks.is_empty());
        for c in &chunks {
            assert!(dir.join(&c.path).exists());
            let sig: Signal<Real> = audio::read_wav(dir.join(&c.path)).unwrap();
            assert_eq!(sig.samples.len(), preprocess::CHUNK_SAMPLES);
            assert_eq!(sig.rate, WORKING_RATE);
        }
        // chunk counts per recording match the closed form
        let manifest = read_manifest_file(dir.join("manifest.jsonl")).unwrap();
        for rec in manifest {
            let expected = preprocess::chunk_count(rec.duration_s);
            let got = chunks
                .iter()
                .filter(|c| c.recording_id == rec.id)
                .count();
            assert_eq!(got, expected, "recording {}", rec.id);
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn features_all_writes_table_and_sidecars() {
        let dir = tmp("feat");
        small_corpus(&dir);
        run_features(&dir, ExtractSet::All).unwrap();
        let table = FeatureTable::load_csv(dir.join("features.csv")).unwrap();
        assert_eq!(table.feature_names.len(), 122);
        let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
        assert_eq!(table.rows.len(), chunks.len());
        for row in &table.rows {
            assert_eq!(row.set, "unsplit");
            assert!(row.values.iter().all(|v| v.is_finite()));
        }
        let mfcc = MatrixTable::load_csv(dir.join("mfcc.csv")).unwrap();
        assert_eq!(mfcc.n_cols, MFCC_COEFFS * MFCC_FRAMES);
        let spec = MatrixTable::load_csv(dir.join("spec.csv")).unwrap();
        assert_eq!(spec.n_cols, SPEC_BINS * SPEC_FRAMES);
        assert!(!dir.join("raw.csv").exists());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn split_rewrites_set_and_weight_columns() {
        let dir = tmp("split");
        small_corpus(&dir);
        run_features(&dir, ExtractSet::All).unwrap();
        let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
        let per_class = feasible_target(&chunks, 3);
        let split = run_split(&dir, 3, per_class).unwrap();
        assert_eq!(split.folds.len(), N_FOLDS);
        let table = FeatureTable::load_csv(dir.join("features.csv")).unwrap();
        let mut seen_test = 0;
        for row in &table.rows {
            assert_ne!(row.set, "unsplit");
            if row.set == "test" {
                seen_test += 1;
                assert_eq!(row.weight, 1.0);
            } else {
                assert!(row.set.starts_with("fold_"));
                assert!(row.weight > 0.0 && row.weight <= 1.0);
            }
        }
        assert_eq!(seen_test, 2 * per_class);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn assignments_match_weight_formula() {
        let dir = tmp("assign");
        small_corpus(&dir);
        let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
        let per_class = feasible_target(&chunks, 5);
        let split = stratified_split(&chunks, 5, per_class).unwrap();
        let assignments = chunk_assignments(&split, &chunks).unwrap();
        assert_eq!(assignments.len(), chunks.len());
        let dev_ids: BTreeSet<&String> = split.folds.iter().flatten().collect();
        let dev: Vec<&ChunkMeta> = chunks
            .iter()
            .filter(|c| dev_ids.contains(&c.chunk_id))
            .collect();
        let counts = GroupCounts::from_chunks(dev.iter().copied());
        for c in &chunks {
            let (set, w) = &assignments[&c.chunk_id];
            if set == "test" {
                assert_eq!(*w, 1.0);
            } else {
                let expect =
                    sample_weight(c.label, c.gender, c.age, &counts, WeightMode::Literal)
                        .unwrap();
                assert_eq!(*w, expect);
            }
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn merge_config_overrides_and_rejects_unknown_keys() {
        let base = gbt::GbtParams::default();
        let merged: gbt::GbtParams =
            merge_config(&base, Some(r#"{"n_estimators": 7, "gamma": 2.5}"#)).unwrap();
        assert_eq!(merged.n_estimators, 7);
        assert_eq!(merged.gamma, 2.5);
        assert_eq!(merged.learning_rate, base.learning_rate);
        assert!(merge_config::<gbt::GbtParams>(&base, Some(r#"{"bogus": 1}"#)).is_err());
        assert!(merge_config::<gbt::GbtParams>(&base, Some("[1,2]")).is_err());
    }

    #[test]
    fn net_run_params_roundtrip_defaults() {
        let p: NetRunParams = merge_config(&NetRunParams::default(), None).unwrap();
        assert_eq!(p.blocks, 2);
        assert_eq!(p.epochs, 200);
        let p: NetRunParams =
            merge_config(&NetRunParams::default(), Some(r#"{"epochs": 3, "dropout": 0.0}"#))
                .unwrap();
        assert_eq!(p.epochs, 3);
        assert_eq!(p.dropout, 0.0);
    }

    #[test]
    fn stats_counts_round_trip() {
        let dir = tmp("stats");
        run_synth(6, 9, 21, &dir).unwrap();
        let rows = run_stats(&dir, &dir).unwrap();
        let get = |cat: &str, key: &str| {
            rows.iter()
                .find(|(c, k, _)| c == cat && k == key)
                .map(|(_, _, n)| *n)
                .unwrap_or(0)
        };
        assert_eq!(get("label", "H"), 6);
        assert_eq!(get("label", "P"), 9);
        assert_eq!(get("gender", "M") + get("gender", "F"), 15);
        let patho_total: usize = rows
            .iter()
            .filter(|(c, _, _)| c == "pathology")
            .map(|(_, _, n)| n)
            .sum();
        assert!(patho_total >= 9, "every P recording carries at least one tag");
        assert!(dir.join("stats.csv").exists());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn report_rendering_validates_supports() {
        let dir = tmp("report");
        let artifact = EvalArtifact {
            model: "gbt".into(),
            features: "all".into(),
            cm: ConfusionMatrix {
                counts: [[82, 26], [38, 94]],
            },
            report: eval::report(&ConfusionMatrix {
                counts: [[82, 26], [38, 94]],
            })
            .unwrap(),
        };
        let path = dir.join("report_gbt.json");
        artifact.save(&path).unwrap();
        let text = run_report(&path).unwrap();
        assert!(text.contains("accuracy: 0.733"));

        let mut broken = artifact.clone();
        broken.cm = ConfusionMatrix {
            counts: [[10, 0], [5, 0]],
        };
        broken.report = eval::report(&broken.cm).unwrap();
        let bad = dir.join("broken.json");
        broken.save(&bad).unwrap();
        assert!(run_report(&bad).is_err());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn end_to_end_small_gbt_tune() {
        let dir = tmp("e2e");
        run_synth(16, 16, 9, &dir).unwrap();
        run_preprocess(&dir, &dir).unwrap();
        run_features(&dir, ExtractSet::All).unwrap();
        let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
        let per_class = feasible_target(&chunks, 7);
        run_split(&dir, 7, per_class).unwrap();
        let outcome = run_tune(&dir, ModelKind::Gbt, "all", 4, 13).unwrap();
        assert!(dir.join("leaderboard_gbt.csv").exists());
        assert!(dir.join("model_gbt.json").exists());
        assert!(dir.join("report_gbt.json").exists());
        assert!(outcome.artifact.test_f1() > 0.5, "synthetic task should beat chance");
        // evaluate of the stored model reproduces the tune-time report
        let again = run_evaluate(&dir, ModelKind::Gbt, "all").unwrap();
        assert_eq!(again.cm, outcome.artifact.cm);
        fs::remove_dir_all(dir).ok();
    }
}
