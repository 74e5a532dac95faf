//! Isolation Forest anomaly detector.
//!
//! Trees isolate points by uniform-random (feature, split value) choices;
//! anomalies sit on short paths. Scores follow s(x) = 2^(-E[h(x)]/c(psi))
//! where c(n) is the expected unsuccessful-search path length of a BST,
//! computed from exact harmonic numbers (the common asymptotic shortcut
//! is off by double digits for the small subsample sizes tuned here).
//! The decision threshold is the (1 - contamination) quantile of the
//! training scores; a point is anomalous iff its score >= threshold.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{to64, Scalar};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Subsample size per tree: a fixed count or min(256, n).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaxSamples {
    Fixed(usize),
    Auto,
}

impl MaxSamples {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            MaxSamples::Auto => n.min(256),
            MaxSamples::Fixed(k) => {
                if k > n {
                    log::warn!("max_samples {k} exceeds {n} rows: clamping");
                }
                k.min(n).max(1)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfParams {
    pub n_estimators: usize,
    pub max_samples: MaxSamples,
    pub contamination: f64,
    pub max_features: f64,
}

impl Default for IfParams {
    fn default() -> Self {
        IfParams {
            n_estimators: 100,
            max_samples: MaxSamples::Auto,
            contamination: 0.5,
            max_features: 1.0,
        }
    }
}

impl IfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidParam("n_estimators must be >= 1".into()));
        }
        if !(self.contamination > 0.0 && self.contamination < 1.0) {
            return Err(Error::InvalidParam(format!(
                "contamination {} outside (0,1)",
                self.contamination
            )));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "max_features {} outside (0,1]",
                self.max_features
            )));
        }
        Ok(())
    }
}

/// Expected path length of an unsuccessful BST search over n points:
/// 2 H(n-1) - 2(n-1)/n, with c(0) = c(1) = 0. Harmonic numbers are summed
/// exactly up to 4096 and expanded asymptotically above (error < 1e-15).
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    let harmonic = if n <= 4096 {
        (1..n).map(|k| 1.0 / k as f64).sum::<f64>()
    } else {
        m.ln() + EULER_GAMMA + 1.0 / (2.0 * m) - 1.0 / (12.0 * m * m)
    };
    2.0 * harmonic - 2.0 * m / (n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum INode {
    Split {
        feat: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    pub nodes: Vec<INode>,
}

impl ITree {
    /// Path length of a query point: edges traversed plus c(size) of the
    /// reached external node.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        let mut edges = 0.0;
        loop {
            match self.nodes[i] {
                INode::External { size } => return edges + c_factor(size),
                INode::Split {
                    feat,
                    value,
                    left,
                    right,
                } => {
                    i = if row[feat] < value { left } else { right };
                    edges += 1.0;
                }
            }
        }
    }

    pub fn height(&self) -> usize {
        fn walk(nodes: &[INode], i: usize) -> usize {
            match nodes[i] {
                INode::External { .. } => 0,
                INode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Grow one isolation tree over the given rows. Splits pick a uniform
/// feature among those with spread in the node, then a uniform value
/// strictly inside (min, max); growth stops at singletons, duplicate-only
/// nodes, or the height cap.
pub fn grow_tree(
    columns: &[Vec<f64>],
    rows: &[u32],
    feats: &[usize],
    height_cap: usize,
    rng: &mut ChaCha8Rng,
) -> ITree {
    fn grow(
        columns: &[Vec<f64>],
        rows: &[u32],
        feats: &[usize],
        depth: usize,
        cap: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<INode>,
    ) -> usize {
        let ranges: Vec<(usize, f64, f64)> = if rows.len() >= 2 && depth < cap {
            feats
                .iter()
                .filter_map(|&f| {
                    let col = &columns[f];
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for &r in rows {
                        lo = lo.min(col[r as usize]);
                        hi = hi.max(col[r as usize]);
                    }
                    (hi > lo).then_some((f, lo, hi))
                })
                .collect()
        } else {
            Vec::new()
        };
        if ranges.is_empty() {
            nodes.push(INode::External { size: rows.len() });
            return nodes.len() - 1;
        }
        let (feat, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        // gen_range can land exactly on lo; a split there would leave the
        // minimum on the wrong side, so redraw (terminates almost surely).
        let value = loop {
            let v = rng.gen_range(lo..hi);
            if v > lo {
                break v;
            }
        };
        let (l_rows, r_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| columns[feat][r as usize] < value);
        let at = nodes.len();
        nodes.push(INode::Split {
            feat,
            value,
            left: 0,
            right: 0,
        });
        let l = grow(columns, &l_rows, feats, depth + 1, cap, rng, nodes);
        let r = grow(columns, &r_rows, feats, depth + 1, cap, rng, nodes);
        if let INode::Split { left, right, .. } = &mut nodes[at] {
            *left = l;
            *right = r;
        }
        at
    }

    let mut nodes = Vec::new();
    grow(columns, rows, feats, 0, height_cap, rng, &mut nodes);
    ITree { nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoForest {
    pub params: IfParams,
    /// Resolved subsample size actually used.
    pub psi: usize,
    pub threshold: f64,
    pub n_features: usize,
    pub trees: Vec<ITree>,
}

/// Fit a forest and fix the decision threshold from the training scores.
pub fn fit<S: Scalar>(x: &Array2<S>, params: &IfParams, seed: u64) -> Result<IsoForest> {
    params.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::Data("isolation forest needs at least 2 rows".into()));
    }
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| x.column(j).iter().map(|&v| to64(v)).collect())
        .collect();
    let psi = params.max_samples.resolve(n);
    let cap = (psi as f64).log2().ceil().max(0.0) as usize;
    let k_feats = ((params.max_features * d as f64).ceil() as usize).clamp(1, d);

    use rayon::prelude::*;
    let trees: Vec<ITree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let rows: Vec<u32> = if psi < n {
                let mut idx: Vec<u32> = rand::seq::index::sample(&mut rng, n, psi)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                idx.sort_unstable();
                idx
            } else {
                (0..n as u32).collect()
            };
            let feats: Vec<usize> = if k_feats < d {
                let mut idx: Vec<usize> =
                    rand::seq::index::sample(&mut rng, d, k_feats).into_iter().collect();
                idx.sort_unstable();
                idx
            } else {
                (0..d).collect()
            };
            grow_tree(&columns, &rows, &feats, cap, &mut rng)
        })
        .collect();

    let mut forest = IsoForest {
        params: *params,
        psi,
        threshold: 0.0,
        n_features: d,
        trees,
    };
    let mut scores = forest.scores(x)?;
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (((1.0 - params.contamination) * n as f64).floor() as usize).min(n - 1);
    forest.threshold = scores[idx];
    Ok(forest)
}

impl IsoForest {
    pub fn score_row<S: Scalar>(&self, row: &[S]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: row.len(),
            });
        }
        let r: Vec<f64> = row.iter().map(|&v| to64(v)).collect();
        let mean_path: f64 = self
            .trees
            .iter()
            .map(|t| t.path_length(&r))
            .sum::<f64>()
            / self.trees.len() as f64;
        Ok(score_from_path(mean_path, self.psi))
    }

    pub fn scores<S: Scalar>(&self, x: &Array2<S>) -> Result<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|row| self.score_row(row.as_slice().expect("contiguous row")))
            .collect()
    }

    /// True = anomalous (score at or above the stored threshold).
    pub fn classify<S: Scalar>(&self, x: &Array2<S>) -> Result<Vec<bool>> {
        Ok(self
            .scores(x)?
            .into_iter()
            .map(|s| s >= self.threshold)
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<IsoForest> {
        Ok(serde_json::from_str(text)?)
    }
}

/// s = 2^(-path / c(psi)); the anomaly score of a mean path length.
pub fn score_from_path(mean_path: f64, psi: usize) -> f64 {
    let c = c_factor(psi);
    if c <= 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_path / c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blob_with_outlier(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0);
        let mut flat = Vec::with_capacity(2 * (n + 1));
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            flat.push(a);
            flat.push(b);
        }
        flat.push(12.0);
        flat.push(-11.0);
        Array2::from_shape_vec((n + 1, 2), flat).unwrap()
    }

    #[test]
    fn c_factor_pins() {
        assert_eq!(c_factor(0), 0.0);
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(2), 1.0);
        let oracle = 2.0 * (1..256).map(|k| 1.0 / k as f64).sum::<f64>() - 2.0 * 255.0 / 256.0;
        assert!((c_factor(256) - oracle).abs() < 1e-12);
        assert!((c_factor(256) - 10.2448).abs() < 0.02);
    }

    #[test]
    fn c_factor_tracks_harmonic_oracle() {
        for n in 3..=4096usize {
            let oracle = 2.0 * (1..n).map(|k| 1.0 / k as f64).sum::<f64>()
                - 2.0 * (n - 1) as f64 / n as f64;
            let rel = (c_factor(n) - oracle).abs() / oracle;
            assert!(rel < 0.003, "n={n}: rel error {rel}");
        }
        // asymptotic branch continues smoothly
        let n = 5000;
        let oracle =
            2.0 * (1..n).map(|k| 1.0 / k as f64).sum::<f64>() - 2.0 * (n - 1) as f64 / n as f64;
        assert!((c_factor(n) - oracle).abs() / oracle < 1e-9);
    }

    #[test]
    fn auto_max_samples_resolves() {
        assert_eq!(MaxSamples::Auto.resolve(100), 100);
        assert_eq!(MaxSamples::Auto.resolve(10_000), 256);
        assert_eq!(MaxSamples::Fixed(64).resolve(32), 32);
        assert_eq!(MaxSamples::Fixed(64).resolve(1000), 64);
    }

    #[test]
    fn constant_matrix_gives_single_external_nodes() {
        let x = Array2::from_elem((20, 3), 1.5);
        let params = IfParams {
            n_estimators: 10,
            ..IfParams::default()
        };
        let forest = fit(&x, &params, 5).unwrap();
        for t in &forest.trees {
            assert_eq!(t.nodes.len(), 1);
            assert_eq!(t.nodes[0], INode::External { size: 20 });
        }
    }

    #[test]
    fn heights_respect_cap_and_fit_is_deterministic() {
        let x = blob_with_outlier(100, 3);
        let params = IfParams {
            n_estimators: 50,
            max_samples: MaxSamples::Fixed(64),
            ..IfParams::default()
        };
        let a = fit(&x, &params, 9).unwrap();
        let cap = (64f64).log2().ceil() as usize;
        for t in &a.trees {
            assert!(t.height() <= cap, "height {} > cap {cap}", t.height());
        }
        let b = fit(&x, &params, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = fit(&x, &params, 10).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn score_formula_fixed_point_and_monotonicity() {
        let psi = 64;
        let c = c_factor(psi);
        assert!((score_from_path(c, psi) - 0.5).abs() < 1e-12);
        let mut prev = score_from_path(0.0, psi);
        for k in 1..30 {
            let s = score_from_path(k as f64 * 0.5, psi);
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn far_outlier_scores_above_every_inlier() {
        let x = blob_with_outlier(100, 7);
        let params = IfParams {
            n_estimators: 100,
            max_samples: MaxSamples::Fixed(64),
            ..IfParams::default()
        };
        let forest = fit(&x, &params, 4).unwrap();
        let scores = forest.scores(&x).unwrap();
        let outlier = scores[scores.len() - 1];
        for (i, &s) in scores[..scores.len() - 1].iter().enumerate() {
            assert!(outlier > s, "inlier {i} scored {s} >= outlier {outlier}");
        }
    }

    #[test]
    fn contamination_flags_expected_training_fraction() {
        let x = blob_with_outlier(99, 13);
        let params = IfParams {
            n_estimators: 60,
            max_samples: MaxSamples::Fixed(32),
            contamination: 0.4,
            ..IfParams::default()
        };
        let forest = fit(&x, &params, 21).unwrap();
        let flagged = forest
            .classify(&x)
            .unwrap()
            .into_iter()
            .filter(|&b| b)
            .count();
        assert!((39..=41).contains(&flagged), "flagged {flagged}");
    }

    #[test]
    fn tiny_contamination_flags_only_max_ties() {
        let x = blob_with_outlier(50, 17);
        let params = IfParams {
            n_estimators: 40,
            max_samples: MaxSamples::Fixed(32),
            contamination: 1e-9,
            ..IfParams::default()
        };
        let forest = fit(&x, &params, 2).unwrap();
        let scores = forest.scores(&x).unwrap();
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        let ties = scores.iter().filter(|&&s| s >= max).count();
        let flagged = forest
            .classify(&x)
            .unwrap()
            .into_iter()
            .filter(|&b| b)
            .count();
        assert_eq!(flagged, ties);
    }

    /// Duplicating every training row can only lengthen or preserve path
    /// lengths: with the same rng and an equal height cap, the grown trees
    /// share structure while external sizes double.
    #[test]
    fn duplicated_rows_never_shorten_paths() {
        let mut rng = stream_rng(31, 0);
        let n = 12;
        let columns: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let dup_columns: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| c.iter().chain(c.iter()).cloned().collect())
            .collect();
        let rows: Vec<u32> = (0..n as u32).collect();
        let dup_rows: Vec<u32> = (0..2 * n as u32).collect();
        let feats = vec![0, 1, 2];
        for tree_seed in 0..20 {
            let mut r1 = stream_rng(100, tree_seed);
            let mut r2 = stream_rng(100, tree_seed);
            let t1 = grow_tree(&columns, &rows, &feats, 64, &mut r1);
            let t2 = grow_tree(&dup_columns, &dup_rows, &feats, 64, &mut r2);
            for i in 0..n {
                let row: Vec<f64> = columns.iter().map(|c| c[i]).collect();
                let p1 = t1.path_length(&row);
                let p2 = t2.path_length(&row);
                assert!(
                    p2 >= p1 - 1e-12,
                    "tree {tree_seed} point {i}: {p2} < {p1}"
                );
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let x = blob_with_outlier(40, 23);
        let params = IfParams {
            n_estimators: 15,
            max_samples: MaxSamples::Auto,
            contamination: 0.25,
            max_features: 0.7,
        };
        let forest = fit(&x, &params, 8).unwrap();
        let back = IsoForest::from_json(&forest.to_json().unwrap()).unwrap();
        assert_eq!(back, forest);
        assert_eq!(back.scores(&x).unwrap(), forest.scores(&x).unwrap());
    }

    #[test]
    fn dimension_mismatch_errors() {
        let x = blob_with_outlier(20, 29);
        let forest = fit(&x, &IfParams::default(), 1).unwrap();
        assert!(matches!(
            forest.score_row(&[0.0, 1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
