//! Densely-connected 1D convolutional network with manual forward and
//! backward passes.
//!
//! Architecture: initial conv, then dense blocks whose layers each run
//! BN -> ReLU -> conv(growth_rate, same padding) -> dropout and append
//! their output to the running channel stack; transitions between blocks
//! run BN -> ReLU -> 1x1 conv (halving channels) -> average-pool(2); the
//! head is BN -> ReLU -> global average pool -> dense(1) -> sigmoid.
//! Input layouts put frequency bins or cepstral coefficients on the
//! channel axis over time; raw waveforms are 1 channel.
//!
//! Convolutions carry no bias (batch norm supplies the shift), so an
//! all-zero input propagates exactly zero into the head and the output is
//! exactly sigmoid(dense bias).
//!
//! Training: Adam on weighted binary cross-entropy plus l2/2 ||W||^2 over
//! conv and dense weights (not BN parameters, not the bias), minibatches
//! of 32, epoch-level learning rate lr0/(1 + decay * epoch), early
//! stopping on validation accuracy with best-weights restore. All
//! reductions are sequential in index order, so results are independent
//! of thread count; statistics accumulate in f64 whatever the parameter
//! scalar is.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{sc, to64, Scalar};

const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth_rate: usize,
    pub initial_filters: usize,
    pub dropout: f64,
    pub l2: f64,
    pub kernel: usize,
    pub input_channels: usize,
    pub input_time: usize,
}

impl NetConfig {
    pub fn new(input_channels: usize, input_time: usize) -> Self {
        NetConfig {
            blocks: 2,
            layers_per_block: 2,
            growth_rate: 5,
            initial_filters: 10,
            dropout: 0.3,
            l2: 1e-4,
            kernel: 3,
            input_channels,
            input_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParam(what));
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.l2 < 0.0 {
            return bad("l2 must be non-negative".into());
        }
        for (v, name) in [
            (self.blocks, "blocks"),
            (self.layers_per_block, "layers_per_block"),
            (self.growth_rate, "growth_rate"),
            (self.initial_filters, "initial_filters"),
            (self.input_channels, "input_channels"),
            (self.input_time, "input_time"),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        let mut t = self.input_time;
        for _ in 0..self.blocks.saturating_sub(1) {
            if t < 2 {
                return bad(format!(
                    "time axis {} too short for the pooling schedule",
                    self.input_time
                ));
            }
            t /= 2;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BatchNorm<S> {
    gamma: Tensor<S>,
    beta: Tensor<S>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl<S: Scalar> BatchNorm<S> {
    fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor {
                shape: vec![channels],
                data: vec![S::one(); channels],
            },
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DenseLayer<S> {
    bn: BatchNorm<S>,
    conv: Tensor<S>, // (growth, in_channels, kernel)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Transition<S> {
    bn: BatchNorm<S>,
    conv: Tensor<S>, // (out_channels, in_channels, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net<S> {
    pub config: NetConfig,
    pub seed: u64,
    /// Fraction of the previous running statistic retained per batch.
    pub bn_momentum: f64,
    init_conv: Tensor<S>, // (filters, input_channels, kernel)
    blocks: Vec<Vec<DenseLayer<S>>>,
    transitions: Vec<Transition<S>>,
    final_bn: BatchNorm<S>,
    dense_w: Tensor<S>, // (channels)
    dense_b: Tensor<S>, // (1)
}

fn he_tensor<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            sc(g * std)
        })
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Build a freshly initialized network. Conv weights are He-normal, BN is
/// identity (gamma 1, beta 0), the dense head starts at N(0, 1/sqrt(C))
/// with zero bias. All draws come from the given seed in construction
/// order.
pub fn build<S: Scalar>(config: &NetConfig, seed: u64) -> Result<Net<S>> {
    config.validate()?;
    let mut rng = stream_rng(seed, 0);
    let k = config.kernel;

    let init_conv = he_tensor(
        &[config.initial_filters, config.input_channels, k],
        config.input_channels * k,
        &mut rng,
    );
    let mut channels = config.initial_filters;
    let mut blocks = Vec::with_capacity(config.blocks);
    let mut transitions = Vec::new();
    for b in 0..config.blocks {
        let mut layers = Vec::with_capacity(config.layers_per_block);
        for _ in 0..config.layers_per_block {
            layers.push(DenseLayer {
                bn: BatchNorm::new(channels),
                conv: he_tensor(
                    &[config.growth_rate, channels, k],
                    channels * k,
                    &mut rng,
                ),
            });
            channels += config.growth_rate;
        }
        blocks.push(layers);
        if b + 1 < config.blocks {
            let out = (channels / 2).max(1);
            transitions.push(Transition {
                bn: BatchNorm::new(channels),
                conv: he_tensor(&[out, channels, 1], channels, &mut rng),
            });
            channels = out;
        }
    }
    let final_bn = BatchNorm::new(channels);
    let dense_w = he_tensor(&[channels], channels, &mut rng);
    let dense_b = Tensor::zeros(&[1]);
    Ok(Net {
        config: *config,
        seed,
        bn_momentum: 0.9,
        init_conv,
        blocks,
        transitions,
        final_bn,
        dense_w,
        dense_b,
    })
}

// ---------------------------------------------------------------------
// stage kernels
// ---------------------------------------------------------------------

fn conv1d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let (b_n, c_in, t) = (x.shape[0], x.shape[1], x.shape[2]);
    let (c_out, k) = (w.shape[0], w.shape[2]);
    debug_assert_eq!(w.shape[1], c_in);
    let pad = k / 2;
    let mut y = Tensor::zeros(&[b_n, c_out, t]);
    for b in 0..b_n {
        for o in 0..c_out {
            let y_off = (b * c_out + o) * t;
            for i in 0..c_in {
                let x_off = (b * c_in + i) * t;
                for dk in 0..k {
                    let wv = w.data[(o * c_in + i) * k + dk];
                    let lo = pad.saturating_sub(dk);
                    let hi = (t + pad).saturating_sub(dk).min(t);
                    for tt in lo..hi {
                        y.data[y_off + tt] += wv * x.data[x_off + tt + dk - pad];
                    }
                }
            }
        }
    }
    y
}

fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let (b_n, c_in, t) = (x.shape[0], x.shape[1], x.shape[2]);
    let (c_out, k) = (w.shape[0], w.shape[2]);
    let pad = k / 2;
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = Tensor::zeros(&w.shape);
    for b in 0..b_n {
        for o in 0..c_out {
            let y_off = (b * c_out + o) * t;
            for i in 0..c_in {
                let x_off = (b * c_in + i) * t;
                for dk in 0..k {
                    let lo = pad.saturating_sub(dk);
                    let hi = (t + pad).saturating_sub(dk).min(t);
                    let wv = w.data[(o * c_in + i) * k + dk];
                    let mut grad_w = S::zero();
                    for tt in lo..hi {
                        let g = dy.data[y_off + tt];
                        dx.data[x_off + tt + dk - pad] += wv * g;
                        grad_w += g * x.data[x_off + tt + dk - pad];
                    }
                    dw.data[(o * c_in + i) * k + dk] += grad_w;
                }
            }
        }
    }
    (dx, dw)
}

struct BnCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    train: bool,
}

fn bn_forward<S: Scalar>(x: &Tensor<S>, bn: &BatchNorm<S>, mode: Mode) -> (Tensor<S>, BnCache<S>) {
    let (b_n, c_n, t) = (x.shape[0], x.shape[1], x.shape[2]);
    let n = (b_n * t) as f64;
    let mut batch_mean = vec![0.0; c_n];
    let mut batch_var = vec![0.0; c_n];
    for c in 0..c_n {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for b in 0..b_n {
            let off = (b * c_n + c) * t;
            for tt in 0..t {
                let v = to64(x.data[off + tt]);
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        batch_mean[c] = mean;
        batch_var[c] = (sq / n - mean * mean).max(0.0);
    }
    let train = mode == Mode::Train;
    let (mean, var): (&[f64], &[f64]) = if train {
        (&batch_mean, &batch_var)
    } else {
        (&bn.running_mean, &bn.running_var)
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(&x.shape);
    let mut y = Tensor::zeros(&x.shape);
    for b in 0..b_n {
        for c in 0..c_n {
            let off = (b * c_n + c) * t;
            let m = sc::<S>(mean[c]);
            let is = sc::<S>(inv_std[c]);
            let g = bn.gamma.data[c];
            let be = bn.beta.data[c];
            for tt in 0..t {
                let xh = (x.data[off + tt] - m) * is;
                xhat.data[off + tt] = xh;
                y.data[off + tt] = g * xh + be;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            train,
        },
    )
}

/// Returns (dx, dgamma, dbeta).
fn bn_backward<S: Scalar>(
    cache: &BnCache<S>,
    bn: &BatchNorm<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    assert!(cache.train, "backward through inference batch norm");
    let (b_n, c_n, t) = (dy.shape[0], dy.shape[1], dy.shape[2]);
    let n = (b_n * t) as f64;
    let mut dgamma = Tensor::zeros(&[c_n]);
    let mut dbeta = Tensor::zeros(&[c_n]);
    let mut dx = Tensor::zeros(&dy.shape);
    for c in 0..c_n {
        let mut s1 = 0.0; // sum dy
        let mut s2 = 0.0; // sum dy * xhat
        for b in 0..b_n {
            let off = (b * c_n + c) * t;
            for tt in 0..t {
                let g = to64(dy.data[off + tt]);
                s1 += g;
                s2 += g * to64(cache.xhat.data[off + tt]);
            }
        }
        dgamma.data[c] = sc(s2);
        dbeta.data[c] = sc(s1);
        let scale = to64(bn.gamma.data[c]) * cache.inv_std[c];
        let m1 = s1 / n;
        let m2 = s2 / n;
        for b in 0..b_n {
            let off = (b * c_n + c) * t;
            for tt in 0..t {
                let g = to64(dy.data[off + tt]);
                let xh = to64(cache.xhat.data[off + tt]);
                dx.data[off + tt] = sc(scale * (g - m1 - xh * m2));
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn relu<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<bool>) {
    let mut y = Tensor::zeros(&x.shape);
    let mut mask = vec![false; x.data.len()];
    for (i, &v) in x.data.iter().enumerate() {
        if v > S::zero() {
            y.data[i] = v;
            mask[i] = true;
        }
    }
    (y, mask)
}

fn relu_backward<S: Scalar>(mask: &[bool], dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(&dy.shape);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            dx.data[i] = dy.data[i];
        }
    }
    dx
}

fn dropout<S: Scalar>(
    x: &Tensor<S>,
    p: f64,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> (Tensor<S>, Option<Vec<S>>) {
    if mode == Mode::Infer || p == 0.0 {
        return (x.clone(), None);
    }
    let rng = rng.expect("dropout in training mode needs an rng");
    let keep = sc::<S>(1.0 / (1.0 - p));
    let mut y = Tensor::zeros(&x.shape);
    let mut mask = vec![S::zero(); x.data.len()];
    for i in 0..x.data.len() {
        if rng.gen::<f64>() >= p {
            mask[i] = keep;
            y.data[i] = x.data[i] * keep;
        }
    }
    (y, Some(mask))
}

fn dropout_backward<S: Scalar>(mask: &Option<Vec<S>>, dy: &Tensor<S>) -> Tensor<S> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let mut dx = Tensor::zeros(&dy.shape);
            for i in 0..dy.data.len() {
                dx.data[i] = dy.data[i] * m[i];
            }
            dx
        }
    }
}

fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (b_n, ca, t) = (a.shape[0], a.shape[1], a.shape[2]);
    let cb = b.shape[1];
    let mut y = Tensor::zeros(&[b_n, ca + cb, t]);
    for bi in 0..b_n {
        let dst = bi * (ca + cb) * t;
        y.data[dst..dst + ca * t].copy_from_slice(&a.data[bi * ca * t..(bi * ca + ca) * t]);
        y.data[dst + ca * t..dst + (ca + cb) * t]
            .copy_from_slice(&b.data[bi * cb * t..(bi * cb + cb) * t]);
    }
    y
}

fn split_channels<S: Scalar>(dy: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let (b_n, c, t) = (dy.shape[0], dy.shape[1], dy.shape[2]);
    let cb = c - ca;
    let mut da = Tensor::zeros(&[b_n, ca, t]);
    let mut db = Tensor::zeros(&[b_n, cb, t]);
    for bi in 0..b_n {
        let src = bi * c * t;
        da.data[bi * ca * t..(bi * ca + ca) * t].copy_from_slice(&dy.data[src..src + ca * t]);
        db.data[bi * cb * t..(bi * cb + cb) * t]
            .copy_from_slice(&dy.data[src + ca * t..src + c * t]);
    }
    (da, db)
}

fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (b_n, c_n, t) = (x.shape[0], x.shape[1], x.shape[2]);
    let t_out = t / 2;
    let half = sc::<S>(0.5);
    let mut y = Tensor::zeros(&[b_n, c_n, t_out]);
    for b in 0..b_n {
        for c in 0..c_n {
            let xo = (b * c_n + c) * t;
            let yo = (b * c_n + c) * t_out;
            for u in 0..t_out {
                y.data[yo + u] = (x.data[xo + 2 * u] + x.data[xo + 2 * u + 1]) * half;
            }
        }
    }
    y
}

fn avg_pool2_backward<S: Scalar>(dy: &Tensor<S>, t_in: usize) -> Tensor<S> {
    let (b_n, c_n, t_out) = (dy.shape[0], dy.shape[1], dy.shape[2]);
    let half = sc::<S>(0.5);
    let mut dx = Tensor::zeros(&[b_n, c_n, t_in]);
    for b in 0..b_n {
        for c in 0..c_n {
            let xo = (b * c_n + c) * t_in;
            let yo = (b * c_n + c) * t_out;
            for u in 0..t_out {
                let g = dy.data[yo + u] * half;
                dx.data[xo + 2 * u] = g;
                dx.data[xo + 2 * u + 1] = g;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------

struct LayerCache<S> {
    x: Tensor<S>, // layer input (pre-BN), kept for the concat bookkeeping
    bn: BnCache<S>,
    relu_mask: Vec<bool>,
    conv_in: Tensor<S>,
    drop_mask: Option<Vec<S>>,
}

struct TransCache<S> {
    bn: BnCache<S>,
    relu_mask: Vec<bool>,
    conv_in: Tensor<S>,
    t_in: usize,
}

pub struct Cache<S> {
    x0: Tensor<S>,
    block_caches: Vec<Vec<LayerCache<S>>>,
    trans_caches: Vec<TransCache<S>>,
    final_bn: BnCache<S>,
    final_relu: Vec<bool>,
    gap_in_t: usize,
    gap_out: Tensor<S>, // (B, C)
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl<S: Scalar> Net<S> {
    /// Forward pass over a (batch, channels, time) tensor. Training mode
    /// normalizes with batch statistics and applies dropout from the given
    /// rng; inference mode uses running statistics and no dropout.
    pub fn forward(
        &self,
        x: &Tensor<S>,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Cache<S>> {
        if x.shape.len() != 3
            || x.shape[1] != self.config.input_channels
            || x.shape[2] != self.config.input_time
        {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_channels * self.config.input_time,
                got: x.shape.iter().skip(1).product(),
            });
        }
        let b_n = x.shape[0];
        let mut cur = conv1d(x, &self.init_conv);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut trans_caches = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            let mut layer_caches = Vec::with_capacity(block.len());
            for layer in block {
                let (bn_out, bn_cache) = bn_forward(&cur, &layer.bn, mode);
                let (relu_out, relu_mask) = relu(&bn_out);
                let conv_out = conv1d(&relu_out, &layer.conv);
                let (drop_out, drop_mask) =
                    dropout(&conv_out, self.config.dropout, mode, rng.as_deref_mut());
                let next = concat_channels(&cur, &drop_out);
                layer_caches.push(LayerCache {
                    x: cur,
                    bn: bn_cache,
                    relu_mask,
                    conv_in: relu_out,
                    drop_mask,
                });
                cur = next;
            }
            block_caches.push(layer_caches);
            if bi + 1 < self.blocks.len() {
                let tr = &self.transitions[bi];
                let (bn_out, bn_cache) = bn_forward(&cur, &tr.bn, mode);
                let (relu_out, relu_mask) = relu(&bn_out);
                let conv_out = conv1d(&relu_out, &tr.conv);
                let t_in = conv_out.shape[2];
                cur = avg_pool2(&conv_out);
                trans_caches.push(TransCache {
                    bn: bn_cache,
                    relu_mask,
                    conv_in: relu_out,
                    t_in,
                });
            }
        }
        let (bn_out, final_bn) = bn_forward(&cur, &self.final_bn, mode);
        let (relu_out, final_relu) = relu(&bn_out);
        // global average pool over time
        let (c_n, t_n) = (relu_out.shape[1], relu_out.shape[2]);
        let mut gap_out = Tensor::zeros(&[b_n, c_n]);
        for b in 0..b_n {
            for c in 0..c_n {
                let off = (b * c_n + c) * t_n;
                let mut acc = 0.0;
                for tt in 0..t_n {
                    acc += to64(relu_out.data[off + tt]);
                }
                gap_out.data[b * c_n + c] = sc(acc / t_n as f64);
            }
        }
        let mut logits = Vec::with_capacity(b_n);
        let mut probs = Vec::with_capacity(b_n);
        for b in 0..b_n {
            let mut z = self.dense_b.data[0];
            for c in 0..c_n {
                z += self.dense_w.data[c] * gap_out.data[b * c_n + c];
            }
            let z = to64(z);
            logits.push(z);
            probs.push(1.0 / (1.0 + (-z).exp()));
        }
        Ok(Cache {
            x0: x.clone(),
            block_caches,
            trans_caches,
            final_bn,
            final_relu,
            gap_in_t: t_n,
            gap_out,
            logits,
            probs,
        })
    }

    /// Fold the batch statistics captured in a training-mode cache into
    /// the running statistics.
    pub fn update_running_stats(&mut self, cache: &Cache<S>) {
        let mom = self.bn_momentum;
        let fold = |bn: &mut BatchNorm<S>, c: &BnCache<S>| {
            for i in 0..bn.running_mean.len() {
                bn.running_mean[i] = mom * bn.running_mean[i] + (1.0 - mom) * c.batch_mean[i];
                bn.running_var[i] = mom * bn.running_var[i] + (1.0 - mom) * c.batch_var[i];
            }
        };
        for (block, caches) in self.blocks.iter_mut().zip(&cache.block_caches) {
            for (layer, lc) in block.iter_mut().zip(caches) {
                fold(&mut layer.bn, &lc.bn);
            }
        }
        for (tr, tc) in self.transitions.iter_mut().zip(&cache.trans_caches) {
            fold(&mut tr.bn, &tc.bn);
        }
        fold(&mut self.final_bn, &cache.final_bn);
    }

    /// Total loss for a forward cache: mean(w * BCE) + l2/2 ||W||^2.
    pub fn loss(&self, cache: &Cache<S>, y: &[f64], w: &[f64]) -> f64 {
        let b_n = cache.probs.len();
        let mut data_loss = 0.0;
        for b in 0..b_n {
            let p = cache.probs[b].clamp(1e-12, 1.0 - 1e-12);
            data_loss += w[b] * -(y[b] * p.ln() + (1.0 - y[b]) * (1.0 - p).ln());
        }
        data_loss /= b_n as f64;
        let mut l2_loss = 0.0;
        if self.config.l2 > 0.0 {
            for (tensor, flag) in self.trainable_tensors().into_iter().zip(self.l2_flags()) {
                if flag {
                    for &pv in &tensor.data {
                        l2_loss += 0.5 * self.config.l2 * to64(pv) * to64(pv);
                    }
                }
            }
        }
        data_loss + l2_loss
    }

    /// Backward pass: gradients for every trainable tensor (aligned with
    /// [`Net::trainable_tensors`]) and the total loss
    /// mean(w * BCE) + l2/2 ||W||^2.
    pub fn backward(&self, cache: &Cache<S>, y: &[f64], w: &[f64]) -> (Vec<Tensor<S>>, f64) {
        let b_n = cache.probs.len();
        assert_eq!(y.len(), b_n);
        assert_eq!(w.len(), b_n);

        let mut data_loss = 0.0;
        let mut dz = vec![0.0; b_n];
        for b in 0..b_n {
            let p = cache.probs[b].clamp(1e-12, 1.0 - 1e-12);
            data_loss += w[b] * -(y[b] * p.ln() + (1.0 - y[b]) * (1.0 - p).ln());
            dz[b] = w[b] * (cache.probs[b] - y[b]) / b_n as f64;
        }
        data_loss /= b_n as f64;

        let c_n = self.dense_w.numel();
        let mut d_dense_w = Tensor::zeros(&[c_n]);
        let mut d_dense_b = Tensor::zeros(&[1]);
        let mut d_gap = Tensor::zeros(&[b_n, c_n]);
        for b in 0..b_n {
            let g = sc::<S>(dz[b]);
            d_dense_b.data[0] += g;
            for c in 0..c_n {
                d_dense_w.data[c] += g * cache.gap_out.data[b * c_n + c];
                d_gap.data[b * c_n + c] = g * self.dense_w.data[c];
            }
        }
        // GAP backward: spread dy/T over time
        let t_n = cache.gap_in_t;
        let inv_t = sc::<S>(1.0 / t_n as f64);
        let mut g = Tensor::zeros(&[b_n, c_n, t_n]);
        for b in 0..b_n {
            for c in 0..c_n {
                let v = d_gap.data[b * c_n + c] * inv_t;
                let off = (b * c_n + c) * t_n;
                for tt in 0..t_n {
                    g.data[off + tt] = v;
                }
            }
        }
        let g = relu_backward(&cache.final_relu, &g);
        let (mut g, d_final_gamma, d_final_beta) =
            bn_backward(&cache.final_bn, &self.final_bn, &g);

        let mut d_blocks: Vec<Vec<(Tensor<S>, Tensor<S>, Tensor<S>)>> = self
            .blocks
            .iter()
            .map(|bl| bl.iter().map(|_| Default::default()).collect())
            .collect();
        let mut d_trans: Vec<(Tensor<S>, Tensor<S>, Tensor<S>)> =
            self.transitions.iter().map(|_| Default::default()).collect();

        for bi in (0..self.blocks.len()).rev() {
            if bi + 1 < self.blocks.len() {
                let tc = &cache.trans_caches[bi];
                let tr = &self.transitions[bi];
                let g_pool = avg_pool2_backward(&g, tc.t_in);
                let (g_conv_in, dw) = conv1d_backward(&tc.conv_in, &tr.conv, &g_pool);
                let g_relu = relu_backward(&tc.relu_mask, &g_conv_in);
                let (g_bn, dgm, dbt) = bn_backward(&tc.bn, &tr.bn, &g_relu);
                d_trans[bi] = (dgm, dbt, dw);
                g = g_bn;
            }
            for li in (0..self.blocks[bi].len()).rev() {
                let lc = &cache.block_caches[bi][li];
                let layer = &self.blocks[bi][li];
                let ca = lc.x.shape[1];
                let (mut g_x, g_out) = split_channels(&g, ca);
                let g_drop = dropout_backward(&lc.drop_mask, &g_out);
                let (g_conv_in, dw) = conv1d_backward(&lc.conv_in, &layer.conv, &g_drop);
                let g_relu = relu_backward(&lc.relu_mask, &g_conv_in);
                let (g_bn, dgm, dbt) = bn_backward(&lc.bn, &layer.bn, &g_relu);
                for i in 0..g_x.data.len() {
                    g_x.data[i] += g_bn.data[i];
                }
                d_blocks[bi][li] = (dgm, dbt, dw);
                g = g_x;
            }
        }
        let (_, d_init) = conv1d_backward(&cache.x0, &self.init_conv, &g);

        // Assemble in trainable order and add l2 on weight tensors.
        let mut grads = vec![d_init];
        for bl in d_blocks {
            for (dgm, dbt, dw) in bl {
                grads.push(dgm);
                grads.push(dbt);
                grads.push(dw);
            }
        }
        for (dgm, dbt, dw) in d_trans {
            grads.push(dgm);
            grads.push(dbt);
            grads.push(dw);
        }
        grads.push(d_final_gamma);
        grads.push(d_final_beta);
        grads.push(d_dense_w);
        grads.push(d_dense_b);

        let mut l2_loss = 0.0;
        if self.config.l2 > 0.0 {
            let l2 = sc::<S>(self.config.l2);
            for ((tensor, flag), grad) in self
                .trainable_tensors()
                .into_iter()
                .zip(self.l2_flags())
                .zip(grads.iter_mut())
            {
                if flag {
                    for (gd, &pv) in grad.data.iter_mut().zip(&tensor.data) {
                        *gd += l2 * pv;
                        l2_loss += 0.5 * self.config.l2 * to64(pv) * to64(pv);
                    }
                }
            }
        }
        (grads, data_loss + l2_loss)
    }

    /// Trainable tensors in a fixed walk order (init conv; per block layer
    /// BN gamma/beta then conv; per transition likewise; final BN; dense).
    pub fn trainable_tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = vec![&self.init_conv];
        for block in &self.blocks {
            for layer in block {
                out.push(&layer.bn.gamma);
                out.push(&layer.bn.beta);
                out.push(&layer.conv);
            }
        }
        for tr in &self.transitions {
            out.push(&tr.bn.gamma);
            out.push(&tr.bn.beta);
            out.push(&tr.conv);
        }
        out.push(&self.final_bn.gamma);
        out.push(&self.final_bn.beta);
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.init_conv];
        for block in &mut self.blocks {
            for layer in block {
                out.push(&mut layer.bn.gamma);
                out.push(&mut layer.bn.beta);
                out.push(&mut layer.conv);
            }
        }
        for tr in &mut self.transitions {
            out.push(&mut tr.bn.gamma);
            out.push(&mut tr.bn.beta);
            out.push(&mut tr.conv);
        }
        out.push(&mut self.final_bn.gamma);
        out.push(&mut self.final_bn.beta);
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    /// True for tensors the l2 penalty covers: conv and dense weights.
    pub fn l2_flags(&self) -> Vec<bool> {
        let mut out = vec![true];
        for block in &self.blocks {
            for _ in block {
                out.extend([false, false, true]);
            }
        }
        for _ in &self.transitions {
            out.extend([false, false, true]);
        }
        out.extend([false, false, true, false]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.trainable_tensors().iter().map(|t| t.numel()).sum()
    }

    /// Inference probabilities for a (n, channels, time) dataset tensor.
    pub fn predict(&self, x: &Tensor<S>, batch: usize) -> Result<Vec<f64>> {
        let n = x.shape[0];
        let (c, t) = (x.shape[1], x.shape[2]);
        let mut probs = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let stop = (start + batch).min(n);
            let mut xb = Tensor::zeros(&[stop - start, c, t]);
            xb.data
                .copy_from_slice(&x.data[start * c * t..stop * c * t]);
            let cache = self.forward(&xb, Mode::Infer, None)?;
            probs.extend(cache.probs);
            start = stop;
        }
        Ok(probs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Net<S>> {
        Ok(serde_json::from_str(text)?)
    }
}

// ---------------------------------------------------------------------
// optimizer and training loop
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new<S: Scalar>(net: &Net<S>) -> Self {
        let shapes: Vec<usize> = net.trainable_tensors().iter().map(|t| t.numel()).collect();
        AdamState {
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam step at the given learning rate.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState,
    net: &mut Net<S>,
    grads: &[Tensor<S>],
    lr: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (pi, param) in net.trainable_tensors_mut().into_iter().enumerate() {
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for (i, pd) in param.data.iter_mut().enumerate() {
            let g = to64(grads[pi].data[i]);
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *pd = *pd - sc::<S>(lr * mhat / (vhat.sqrt() + ADAM_EPS));
        }
    }
}

/// Epoch-level learning rate: lr0 / (1 + decay * epoch).
pub fn lr_at(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 / (1.0 + decay * epoch as f64)
}

#[derive(Clone, Debug)]
pub struct Dataset<S> {
    pub x: Tensor<S>, // (n, channels, time)
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.x.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Tensor<S>, Vec<f64>, Vec<f64>) {
        let (c, t) = (self.x.shape[1], self.x.shape[2]);
        let mut xb = Tensor::zeros(&[idx.len(), c, t]);
        let mut yb = Vec::with_capacity(idx.len());
        let mut wb = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            xb.data[row * c * t..(row + 1) * c * t]
                .copy_from_slice(&self.x.data[i * c * t..(i + 1) * c * t]);
            yb.push(self.y[i]);
            wb.push(self.w[i]);
        }
        (xb, yb, wb)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            patience: 10,
            batch_size: 32,
            lr0: 0.01,
            lr_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub valid_acc: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
}

pub fn accuracy(probs: &[f64], y: &[f64]) -> f64 {
    let hits = probs
        .iter()
        .zip(y)
        .filter(|(&p, &yi)| (p >= 0.5) == (yi >= 0.5))
        .count();
    hits as f64 / y.len() as f64
}

/// Train with Adam and early stopping on validation accuracy; the net is
/// left holding the best-on-validation weights.
pub fn train<S: Scalar>(
    net: &mut Net<S>,
    train_set: &Dataset<S>,
    valid_set: &Dataset<S>,
    opts: &TrainOptions,
) -> Result<History> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Data("empty training or validation set".into()));
    }
    let mut adam = AdamState::new(net);
    let mut history = History::default();
    let mut best: Option<Net<S>> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut step = 0u64;
    for epoch in 0..opts.epochs {
        let lr = lr_at(opts.lr0, opts.lr_decay, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(opts.seed, 1_000_000 + epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let (xb, yb, wb) = train_set.gather(chunk);
            let mut drop_rng = stream_rng(opts.seed, 2_000_000 + step);
            let cache = net.forward(&xb, Mode::Train, Some(&mut drop_rng))?;
            let (grads, loss) = net.backward(&cache, &yb, &wb);
            net.update_running_stats(&cache);
            adam_step(&mut adam, net, &grads, lr);
            epoch_loss += loss;
            batches += 1.0;
            step += 1;
        }
        history.train_loss.push(epoch_loss / batches);
        let probs = net.predict(&valid_set.x, opts.batch_size)?;
        let acc = accuracy(&probs, &valid_set.y);
        history.valid_acc.push(acc);
        if acc > best_acc {
            best_acc = acc;
            history.best_epoch = epoch;
            best = Some(net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > opts.patience {
                break;
            }
        }
    }
    if let Some(b) = best {
        *net = b;
    }
    history.best_valid_acc = best_acc;
    Ok(history)
}
