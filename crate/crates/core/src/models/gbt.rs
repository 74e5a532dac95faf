//! Second-order gradient-boosted decision trees for binary classification.
//!
//! Newton boosting on the logistic loss with exact greedy split search:
//! per round, a regression tree is grown on the gradient/hessian pairs,
//! split gain is 1/2 [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma,
//! and leaf weights are the Newton step -G/(H+l) scaled by the learning
//! rate. Row subsampling per round and column subsampling per tree draw
//! from seeds derived with the crate's 64-bit mix, so training is
//! reproducible and thread-count independent.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{to64, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    /// Minimum split gain; a split must clear it to be kept.
    pub gamma: f64,
    pub max_depth: usize,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            learning_rate: 0.3,
            gamma: 0.0,
            max_depth: 6,
            min_child_weight: 1.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            lambda: 1.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParam(what));
        if self.n_estimators < 1 {
            return bad("n_estimators must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0,1]", self.learning_rate));
        }
        for (v, name) in [
            (self.subsample, "subsample"),
            (self.colsample_bytree, "colsample_bytree"),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0,1]"));
            }
        }
        if self.gamma < 0.0 || self.lambda < 0.0 || self.min_child_weight < 0.0 {
            return bad("gamma, lambda, min_child_weight must be non-negative".into());
        }
        Ok(())
    }
}

/// Gradient and hessian of the weighted logistic loss at margin-space
/// probability p for label y in {0,1}: (w (p - y), w p (1 - p)).
pub fn logistic_grad_hess(y: f64, p: f64, w: f64) -> (f64, f64) {
    (w * (p - y), w * p * (1.0 - p))
}

fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feat: usize,
        thr: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        leaf_weight: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { leaf_weight } => return leaf_weight,
                Node::Split {
                    feat, thr, left, right, ..
                } => i = if row[feat] < thr { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feat: usize,
    pub thr: f64,
    pub gain: f64,
}

/// Exact greedy split search over the given rows and feature subset.
///
/// Thresholds are midpoints between consecutive distinct feature values;
/// the winner is the maximal gain with both children clearing
/// min_child_weight, ties broken by lower feature index then lower
/// threshold. Returns None when nothing clears gamma.
pub fn best_split(
    columns: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    rows: &[u32],
    feats: &[usize],
    params: &GbtParams,
) -> Option<SplitCandidate> {
    let (g_tot, h_tot) = rows.iter().fold((0.0, 0.0), |(gs, hs), &r| {
        (gs + g[r as usize], hs + h[r as usize])
    });
    let lam = params.lambda;
    let parent = g_tot * g_tot / (h_tot + lam);

    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<u32> = Vec::with_capacity(rows.len());
    for &f in feats {
        let col = &columns[f];
        order.clear();
        order.extend_from_slice(rows);
        order.sort_unstable_by(|&a, &b| {
            col[a as usize].partial_cmp(&col[b as usize]).unwrap()
        });
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len() - 1 {
            let r = order[w] as usize;
            gl += g[r];
            hl += h[r];
            let v = col[r];
            let v_next = col[order[w + 1] as usize];
            if v_next <= v {
                continue;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain =
                0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - params.gamma;
            if gain <= 0.0 {
                continue;
            }
            let thr = 0.5 * (v + v_next);
            let better = match &best {
                None => true,
                Some(b) => {
                    gain > b.gain
                        || (gain == b.gain && (f < b.feat || (f == b.feat && thr < b.thr)))
                }
            };
            if better {
                best = Some(SplitCandidate { feat: f, thr, gain });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    feats: &'a [usize],
    params: &'a GbtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: &[u32], depth: usize) -> usize {
        let split = if depth < self.params.max_depth && rows.len() >= 2 {
            best_split(self.columns, self.g, self.h, rows, self.feats, self.params)
        } else {
            None
        };
        match split {
            None => {
                let (gs, hs) = rows.iter().fold((0.0, 0.0), |(a, b), &r| {
                    (a + self.g[r as usize], b + self.h[r as usize])
                });
                let leaf_weight =
                    -gs / (hs + self.params.lambda) * self.params.learning_rate;
                self.nodes.push(Node::Leaf { leaf_weight });
                self.nodes.len() - 1
            }
            Some(c) => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .iter()
                    .partition(|&&r| self.columns[c.feat][r as usize] < c.thr);
                let at = self.nodes.len();
                self.nodes.push(Node::Split {
                    feat: c.feat,
                    thr: c.thr,
                    left: 0,
                    right: 0,
                    gain: c.gain,
                });
                let l = self.grow(&left_rows, depth + 1);
                let r = self.grow(&right_rows, depth + 1);
                if let Node::Split { left, right, .. } = &mut self.nodes[at] {
                    *left = l;
                    *right = r;
                }
                at
            }
        }
    }
}

/// Fit a boosted ensemble. `y` holds 0/1 labels, `w` per-sample weights.
pub fn train_gbt<S: Scalar>(
    x: &Array2<S>,
    y: &[f64],
    w: &[f64],
    params: &GbtParams,
    seed: u64,
) -> Result<GbtModel> {
    params.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len().min(w.len()) });
    }
    if n == 0 || d == 0 {
        return Err(Error::Data("empty training matrix".into()));
    }

    // Hot loops run on f64 columns regardless of the input scalar.
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| x.column(j).iter().map(|&v| to64(v)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| x.row(i).iter().map(|&v| to64(v)).collect())
        .collect();

    let w_sum: f64 = w.iter().sum();
    let pos_rate = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / w_sum;
    let pos_rate = pos_rate.clamp(1e-7, 1.0 - 1e-7);
    let base_score = (pos_rate / (1.0 - pos_rate)).ln();

    let mut model = GbtModel {
        params: params.clone(),
        n_features: d,
        base_score,
        trees: Vec::new(),
    };
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("single-class training labels: returning bias-only model");
        return Ok(model);
    }

    let mut margins = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for round in 0..params.n_estimators {
        let mut rng = stream_rng(seed, round as u64);
        for i in 0..n {
            let (gi, hi) = logistic_grad_hess(y[i], sigmoid(margins[i]), w[i]);
            g[i] = gi;
            h[i] = hi;
        }
        let sampled: Vec<u32> = if params.subsample < 1.0 {
            let amount = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut idx: Vec<u32> = rand::seq::index::sample(&mut rng, n, amount)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            idx.sort_unstable();
            idx
        } else {
            (0..n as u32).collect()
        };
        let feats: Vec<usize> = if params.colsample_bytree < 1.0 {
            let k = ((params.colsample_bytree * d as f64).ceil() as usize).clamp(1, d);
            let mut idx: Vec<usize> =
                rand::seq::index::sample(&mut rng, d, k).into_iter().collect();
            idx.sort_unstable();
            idx
        } else {
            (0..d).collect()
        };

        let mut builder = TreeBuilder {
            columns: &columns,
            g: &g,
            h: &h,
            feats: &feats,
            params,
            nodes: Vec::new(),
        };
        builder.grow(&sampled, 0);
        let tree = Tree { nodes: builder.nodes };
        for (m, row) in margins.iter_mut().zip(&rows) {
            *m += tree.eval(row);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

impl GbtModel {
    pub fn predict_row<S: Scalar>(&self, row: &[S]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: row.len(),
            });
        }
        let r: Vec<f64> = row.iter().map(|&v| to64(v)).collect();
        let margin: f64 = self.base_score + self.trees.iter().map(|t| t.eval(&r)).sum::<f64>();
        Ok(sigmoid(margin))
    }

    pub fn predict<S: Scalar>(&self, x: &Array2<S>) -> Result<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|row| self.predict_row(row.as_slice().expect("contiguous row")))
            .collect()
    }

    /// Total split gain per feature, descending; ties by feature index.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let mut gain = std::collections::BTreeMap::new();
        for t in &self.trees {
            for node in &t.nodes {
                if let Node::Split { feat, gain: g, .. } = node {
                    *gain.entry(*feat).or_insert(0.0) += g;
                }
            }
        }
        let mut out: Vec<(usize, f64)> = gain.into_iter().collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<GbtModel> {
        Ok(serde_json::from_str(text)?)
    }
}
