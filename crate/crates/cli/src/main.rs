//! vpd: command-line front end for the voice pathology detection pipeline.
//!
//! Each subcommand is one pipeline stage operating on a shared artifact
//! directory (`--out`). Stages are idempotent: identical inputs and seeds
//! produce byte-identical outputs, independent of `--jobs`.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use env_logger::Builder;
use log::LevelFilter;

use vpd_core::eval::Subset;
use vpd_core::pipeline::{self, ExtractSet, ModelKind};
use vpd_core::Error;

#[derive(Parser)]
#[command(name = "vpd", version, about = "Voice pathology detection pipeline")]
struct Cli {
    /// Worker threads (env VPD_JOBS as fallback; default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sustained-vowel corpus with known labels
    Synth {
        /// Healthy speakers to synthesize
        #[arg(long, default_value_t = 200)]
        healthy: usize,
        /// Pathological speakers to synthesize
        #[arg(long, default_value_t = 200)]
        pathological: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Artifact directory (manifest.jsonl, wav/)
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample to 16 kHz, admit, and cut recordings into 750 ms chunks
    Preprocess {
        /// Corpus root with manifest.jsonl and wav files (default: --out)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features for every chunk
    Features {
        /// all | af | af-base | af-stats | mfcc | spec | raw
        #[arg(long, default_value = "all")]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the speaker-disjoint test set and 10 development folds
    Split {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Test chunks to reserve per class
        #[arg(long, default_value_t = 120)]
        test_per_class: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model with default or --config parameters
    Train {
        /// gbt | iforest | densenet
        #[arg(long)]
        model: String,
        /// Feature subset (gbt/iforest) or matrix kind (densenet: mfcc|spec|raw)
        #[arg(long)]
        features: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// JSON file overriding model parameters
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training epochs (densenet; overrides --config)
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized hyperparameter search with 10-fold cross-validation
    Tune {
        /// gbt | iforest
        #[arg(long)]
        model: String,
        /// Feature subset: all | af | af-base | af-stats | mfcc
        #[arg(long)]
        features: String,
        #[arg(long, default_value_t = 50)]
        n_iter: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a stored model on the test set
    Evaluate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        features: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune a GBT per feature subset and tabulate the comparison
    Ablate {
        /// Comma-separated subsets
        #[arg(long, default_value = "all,af,af-stats,af-base,mfcc")]
        subsets: String,
        #[arg(long, default_value_t = 20)]
        n_iter: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus composition counts as CSV
    Stats {
        /// Directory with manifest.jsonl (default: --out)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a stored evaluation report in the standard table layout
    Report {
        /// Path to a report JSON written by train/tune/evaluate
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let mut builder = Builder::new();
    builder.format_target(false);
    builder.filter(None, LevelFilter::Info);
    builder.parse_default_env();
    builder.init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = err
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::InvalidParam(_)));
            ExitCode::from(if usage { 2 } else { 3 })
        }
    }
}

fn jobs_from_env() -> Result<Option<usize>> {
    match std::env::var("VPD_JOBS") {
        Ok(v) => {
            let n = v.parse::<usize>().map_err(|_| {
                Error::InvalidParam(format!("VPD_JOBS must be a thread count, got {v:?}"))
            })?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn read_config(path: Option<&Path>) -> Result<Option<String>> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(Some(text))
        }
        None => Ok(None),
    }
}

/// Overlay a single flag on top of the config JSON, so flags win over
/// the config file, which wins over defaults.
fn override_key(config: Option<String>, key: &str, value: Option<usize>) -> Result<Option<String>> {
    let Some(v) = value else { return Ok(config) };
    let mut obj: serde_json::Value = match &config {
        Some(text) => serde_json::from_str(text).context("parsing --config JSON")?,
        None => serde_json::json!({}),
    };
    let map = obj
        .as_object_mut()
        .ok_or_else(|| Error::InvalidParam("config must be a JSON object".into()))?;
    map.insert(key.to_string(), v.into());
    Ok(Some(obj.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(n) => Some(n),
        None => jobs_from_env()?,
    };
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidParam("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::Synth {
            healthy,
            pathological,
            seed,
            out,
        } => {
            println!("seed = {seed}");
            let recs = pipeline::run_synth(healthy, pathological, seed, &out)?;
            println!(
                "synthesized {} recordings under {}",
                recs.len(),
                out.display()
            );
        }
        Command::Preprocess { data, out } => {
            let data = data.unwrap_or_else(|| out.clone());
            let chunks = pipeline::run_preprocess(&data, &out)?;
            println!("wrote {} chunks under {}", chunks.len(), out.display());
        }
        Command::Features { set, out } => {
            let set = ExtractSet::from_str(&set)?;
            pipeline::run_features(&out, set)?;
            println!("features extracted under {}", out.display());
        }
        Command::Split {
            seed,
            test_per_class,
            out,
        } => {
            println!("seed = {seed}");
            let split = pipeline::run_split(&out, seed, test_per_class)?;
            println!(
                "test chunks: {}, development chunks: {}",
                split.test.len(),
                split.development().len()
            );
        }
        Command::Train {
            model,
            features,
            seed,
            config,
            epochs,
            out,
        } => {
            println!("seed = {seed}");
            let kind = ModelKind::from_str(&model)?;
            let config = read_config(config.as_deref())?;
            let config = override_key(config, "epochs", epochs)?;
            let artifact = pipeline::run_train(&out, kind, &features, seed, config.as_deref())?;
            println!(
                "{} on {}: test F1 {:.3}",
                kind.name(),
                features,
                artifact.test_f1()
            );
        }
        Command::Tune {
            model,
            features,
            n_iter,
            seed,
            out,
        } => {
            println!("seed = {seed}");
            let kind = ModelKind::from_str(&model)?;
            let outcome = pipeline::run_tune(&out, kind, &features, n_iter, seed)?;
            println!(
                "best trial {}: cv F1 {:.3}, test F1 {:.3}",
                outcome.best.trial,
                outcome.best.f1_valid_mean,
                outcome.artifact.test_f1()
            );
        }
        Command::Evaluate {
            model,
            features,
            out,
        } => {
            let kind = ModelKind::from_str(&model)?;
            let artifact = pipeline::run_evaluate(&out, kind, &features)?;
            println!(
                "{} on {}: test F1 {:.3}",
                kind.name(),
                features,
                artifact.test_f1()
            );
        }
        Command::Ablate {
            subsets,
            n_iter,
            seed,
            out,
        } => {
            println!("seed = {seed}");
            let subsets: Vec<Subset> = subsets
                .split(',')
                .map(|t| Subset::from_str(t.trim()))
                .collect::<vpd_core::Result<_>>()?;
            let rows = pipeline::run_ablate(&out, &subsets, n_iter, seed)?;
            for r in &rows {
                println!(
                    "{}: {} columns, cv F1 {:.3}, test F1 {:.3}",
                    r.subset, r.columns, r.f1_cv_valid, r.f1_test
                );
            }
        }
        Command::Stats { data, out } => {
            let data = data.unwrap_or_else(|| out.clone());
            let rows = pipeline::run_stats(&data, &out)?;
            println!("{} count rows written to {}", rows.len(), out.join("stats.csv").display());
        }
        Command::Report { report } => {
            let text = pipeline::run_report(&report)?;
            print!("{text}");
        }
    }
    Ok(())
}
