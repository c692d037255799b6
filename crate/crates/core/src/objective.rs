//! Triplet objective for training an encoder, its gradient, and SGD.
//!
//! Each anchor `X_{i,j}` is paired with a second view `X_{i,j+}` of the same
//! sample and a view of another sample `X_{i-,j-}`. Over a batch of size `B`
//! drawn from `m` samples the loss is
//!
//! ```text
//! unsup   = c * sum_b w_b |f(a_b) - f(n_b)|^2,   w_b = exp(-|a_b - n_b|^2 / t)
//! selfsup = c * lambda1 * sum_b |f(a_b) - f(p_b)|^2
//! reg     = lambda2 * sum_{l1 <= l2} (G - I)_{l1 l2}^2,   G = c * sum_b f(a_b) f(a_b)^T
//! ```
//!
//! with `c = m / B`, so every term estimates its full-population sum.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Layer};
use crate::error::{Error, Result};
use crate::manifold::MultiViewDataset;
use crate::rng::{self, Domain};

/// One mini-batch of triplets. Points are stored column-wise (`D x B`).
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub anchors: DMatrix<f64>,
    pub positives: DMatrix<f64>,
    pub negatives: DMatrix<f64>,
    pub neg_weights: Vec<f64>,
    pub anchor_ids: Vec<usize>,
    pub negative_ids: Vec<usize>,
    /// Number of samples `m` the batch was drawn from.
    pub population: usize,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.neg_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neg_weights.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.population as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub bandwidth_t: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 100.0,
            lambda2: 200.0,
            bandwidth_t: 1.0,
            batch_size: 40,
            learning_rate: 1e-6,
            lr_decay: 1.0,
            epochs: 200,
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.bandwidth_t > 0.0
            && self.bandwidth_t.is_finite()
            && self.batch_size > 0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.lr_decay > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid loss configuration {self:?}")))
        }
    }
}

/// The three loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub unsup: f64,
    pub selfsup: f64,
    pub reg: f64,
}

impl LossBreakdown {
    fn new(unsup: f64, selfsup: f64, reg: f64) -> Self {
        LossBreakdown {
            total: unsup + selfsup + reg,
            unsup,
            selfsup,
            reg,
        }
    }
}

/// Draws triplet batches epoch by epoch: anchors sweep a fresh permutation
/// of the samples each epoch, everything else is drawn uniformly.
pub struct TripletSampler<'a> {
    dataset: &'a MultiViewDataset,
    batch_size: usize,
    bandwidth_t: f64,
    seed: u64,
}

impl<'a> TripletSampler<'a> {
    pub fn new(dataset: &'a MultiViewDataset, batch_size: usize, t: f64, seed: u64) -> Result<Self> {
        if dataset.n() < 2 {
            return Err(Error::config(
                "the self-supervised term needs a positive view, so n must be at least 2",
            ));
        }
        if dataset.m() < 2 {
            return Err(Error::config("negative sampling needs m >= 2"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config(format!("bandwidth t must be positive, got {t}")));
        }
        Ok(TripletSampler {
            dataset,
            batch_size,
            bandwidth_t: t,
            seed,
        })
    }

    /// All batches of one epoch; the last one may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<TripletBatch> {
        let ds = self.dataset;
        let (m, n, dim) = (ds.m(), ds.n(), ds.dim());
        let mut rng = rng::stream(self.seed, Domain::Triplet, epoch as u64);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);

        order
            .chunks(self.batch_size)
            .map(|ids| {
                let b = ids.len();
                let mut anchors = DMatrix::zeros(dim, b);
                let mut positives = DMatrix::zeros(dim, b);
                let mut negatives = DMatrix::zeros(dim, b);
                let mut neg_weights = Vec::with_capacity(b);
                let mut negative_ids = Vec::with_capacity(b);
                for (col, &i) in ids.iter().enumerate() {
                    let j = rng.gen_range(0..n);
                    let mut jp = rng.gen_range(0..n - 1);
                    if jp >= j {
                        jp += 1;
                    }
                    let mut ineg = rng.gen_range(0..m - 1);
                    if ineg >= i {
                        ineg += 1;
                    }
                    let jneg = rng.gen_range(0..n);
                    let a = ds.view(i, j);
                    let neg = ds.view(ineg, jneg);
                    anchors.column_mut(col).copy_from_slice(a);
                    positives.column_mut(col).copy_from_slice(ds.view(i, jp));
                    negatives.column_mut(col).copy_from_slice(neg);
                    let d2: f64 = a.iter().zip(neg).map(|(x, y)| (x - y) * (x - y)).sum();
                    neg_weights.push((-d2 / self.bandwidth_t).exp());
                    negative_ids.push(ineg);
                }
                TripletBatch {
                    anchors,
                    positives,
                    negatives,
                    neg_weights,
                    anchor_ids: ids.to_vec(),
                    negative_ids,
                    population: m,
                }
            })
            .collect()
    }
}

/// First batch of the first epoch of a [`TripletSampler`].
pub fn sample_triplets(
    dataset: &MultiViewDataset,
    batch_size: usize,
    t: f64,
    seed: u64,
) -> Result<TripletBatch> {
    let sampler = TripletSampler::new(dataset, batch_size, t, seed)?;
    Ok(sampler.epoch(0).swap_remove(0))
}

fn check_batch(params: &EncoderParams, batch: &TripletBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("triplet batch is empty"));
    }
    let b = batch.len();
    let d = params.input_dim();
    for mat in [&batch.anchors, &batch.positives, &batch.negatives] {
        if mat.shape() != (d, b) {
            return Err(Error::Data(format!(
                "batch block has shape {:?}, expected ({d}, {b})",
                mat.shape()
            )));
        }
    }
    Ok(())
}

/// Runs anchors, positives and negatives through the encoder as one block.
fn forward_all(params: &EncoderParams, batch: &TripletBatch) -> Result<crate::encoder::ForwardCache> {
    let b = batch.len();
    let mut inputs = DMatrix::zeros(params.input_dim(), 3 * b);
    inputs.columns_mut(0, b).copy_from(&batch.anchors);
    inputs.columns_mut(b, b).copy_from(&batch.positives);
    inputs.columns_mut(2 * b, b).copy_from(&batch.negatives);
    params.forward(&inputs)
}

struct Terms {
    breakdown: LossBreakdown,
    grad_output: DMatrix<f64>,
}

fn evaluate(out: &DMatrix<f64>, batch: &TripletBatch, cfg: &LossConfig, want_grad: bool) -> Terms {
    let b = batch.len();
    let c = batch.scale();
    let nout = out.nrows();
    let a = out.columns(0, b);
    let p = out.columns(b, b);
    let ng = out.columns(2 * b, b);

    let mut unsup = 0.0;
    let mut selfsup = 0.0;
    let mut grad = if want_grad {
        DMatrix::zeros(nout, 3 * b)
    } else {
        DMatrix::zeros(0, 0)
    };
    for k in 0..b {
        let w = batch.neg_weights[k];
        for l in 0..nout {
            let dn = a[(l, k)] - ng[(l, k)];
            let dp = a[(l, k)] - p[(l, k)];
            unsup += w * dn * dn;
            selfsup += dp * dp;
            if want_grad {
                let gn = 2.0 * c * w * dn;
                let gp = 2.0 * c * cfg.lambda1 * dp;
                grad[(l, k)] += gn + gp;
                grad[(l, b + k)] -= gp;
                grad[(l, 2 * b + k)] -= gn;
            }
        }
    }
    unsup *= c;
    selfsup *= c * cfg.lambda1;

    let mut e = (a * a.transpose()) * c;
    for l in 0..nout {
        e[(l, l)] -= 1.0;
    }
    let mut reg = 0.0;
    for l2 in 0..nout {
        for l1 in 0..=l2 {
            reg += e[(l1, l2)] * e[(l1, l2)];
        }
    }
    reg *= cfg.lambda2;

    if want_grad && cfg.lambda2 != 0.0 {
        let mut k = e.clone();
        for l in 0..nout {
            k[(l, l)] *= 2.0;
        }
        let g_reg = (k * a) * (2.0 * c * cfg.lambda2);
        let mut block = grad.columns_mut(0, b);
        block += g_reg;
    }

    Terms {
        breakdown: LossBreakdown::new(unsup, selfsup, reg),
        grad_output: grad,
    }
}

pub fn loss(params: &EncoderParams, batch: &TripletBatch, cfg: &LossConfig) -> Result<LossBreakdown> {
    check_batch(params, batch)?;
    let cache = forward_all(params, batch)?;
    Ok(evaluate(cache.output(), batch, cfg, false).breakdown)
}

/// Loss together with its exact gradient, one [`Layer`] per encoder layer.
pub fn loss_gradient(
    params: &EncoderParams,
    batch: &TripletBatch,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<Layer>)> {
    check_batch(params, batch)?;
    let cache = forward_all(params, batch)?;
    let terms = evaluate(cache.output(), batch, cfg, true);
    let grads = params.backward(&cache, &terms.grad_output);
    Ok((terms.breakdown, grads))
}

/// Mean of each loss term over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: EncoderParams,
    pub trajectory: Vec<EpochLoss>,
}

/// Fresh encoder for `dataset` with standardization fitted to it.
///
/// The output layer is shrunk by `1/sqrt(m)` so the scaled Gram starts near
/// the identity instead of near `m * I`, where the quartic regularizer would
/// blow up the first SGD steps.
pub fn init_encoder(dataset: &MultiViewDataset, arch: &[usize], seed: u64) -> Result<EncoderParams> {
    if arch.first() != Some(&dataset.dim()) {
        return Err(Error::config(format!(
            "architecture {arch:?} does not start with the data dimension {}",
            dataset.dim()
        )));
    }
    let mut params = EncoderParams::init(arch, rng::derive_seed(seed, Domain::Init, 0))?;
    params.fit_standardization(dataset)?;
    let shrink = 1.0 / (dataset.m() as f64).sqrt();
    params.layers.last_mut().unwrap().weight *= shrink;
    Ok(params)
}

/// Mini-batch SGD from a fresh initialization.
pub fn train(dataset: &MultiViewDataset, arch: &[usize], cfg: &LossConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let params = init_encoder(dataset, arch, cfg.seed)?;
    train_from(params, dataset, cfg)
}

/// Mini-batch SGD starting at `params`.
pub fn train_from(
    mut params: EncoderParams,
    dataset: &MultiViewDataset,
    cfg: &LossConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let sampler = TripletSampler::new(dataset, cfg.batch_size, cfg.bandwidth_t, cfg.seed)?;
    let mut lr = cfg.learning_rate;
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = sampler.epoch(epoch);
        let mut acc = LossBreakdown::default();
        for batch in &batches {
            let (l, grads) = loss_gradient(&params, batch, cfg).map_err(|e| Error::Training {
                epoch,
                msg: e.to_string(),
            })?;
            if !l.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("loss became {}", l.total),
                });
            }
            acc.unsup += l.unsup;
            acc.selfsup += l.selfsup;
            acc.reg += l.reg;
            if lr != 0.0 {
                params.apply_update(&grads, lr);
            }
        }
        if !params.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: "parameters became non-finite".into(),
            });
        }
        let nb = batches.len() as f64;
        let mean = LossBreakdown::new(acc.unsup / nb, acc.selfsup / nb, acc.reg / nb);
        log::debug!("epoch {epoch}: {mean:?}");
        trajectory.push(EpochLoss { epoch, loss: mean });
        lr *= cfg.lr_decay;
    }
    Ok(TrainingOutcome { params, trajectory })
}

/// Mean positive-pair over mean negative-pair squared distance of the
/// encoded triplets from one epoch sweep of `dataset`.
pub fn invariance_ratio(params: &EncoderParams, dataset: &MultiViewDataset, seed: u64) -> Result<f64> {
    let sampler = TripletSampler::new(dataset, dataset.m(), 1.0, seed)?;
    let batch = sampler.epoch(0).swap_remove(0);
    let a = params.encode_batch(&batch.anchors)?;
    let p = params.encode_batch(&batch.positives)?;
    let n = params.encode_batch(&batch.negatives)?;
    let pos = (&a - &p).norm_squared();
    let neg = (&a - &n).norm_squared();
    if neg == 0.0 {
        return Err(Error::numerical("all negative pairs coincide"));
    }
    Ok(pos / neg)
}

/// `sum_i f(X_{i,0}) f(X_{i,0})^T` over every sample, which equals the
/// batch-scaled Gram when the batch is the whole dataset.
pub fn representation_gram(params: &EncoderParams, dataset: &MultiViewDataset) -> Result<DMatrix<f64>> {
    let mut inputs = DMatrix::zeros(dataset.dim(), dataset.m());
    for i in 0..dataset.m() {
        inputs.column_mut(i).copy_from_slice(dataset.view(i, 0));
    }
    let out = params.encode_batch(&inputs)?;
    Ok(&out * out.transpose())
}
