//! Label-preserving metric feature extractor.
//!
//! The extractor is trained so that the cosine similarity of two features,
//! scaled by a temperature and squashed with a sigmoid, predicts whether the
//! two inputs share a label. The loss averages binary cross-entropy over all
//! ordered pairs of a minibatch, self-pairs included.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::data::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Activation, MlpParams, OptimKind, OptimState, Tensor2};
use crate::rng::{derive_seed, rng_for, stream};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub net: MlpParams,
    pub tau: f64,
    pub feature_dim: usize,
}

/// Source-feature manifold sample: unit-norm feature rows with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub features: Tensor2,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tau: 0.1,
            hidden: vec![64, 64, 64],
            feature_dim: 16,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss; entry 0 is measured before any update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory(pub Vec<f64>);

impl LossHistory {
    pub fn first(&self) -> Option<f64> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.0.iter().enumerate() {
            let _ = writeln!(s, "{e},{l}");
        }
        s
    }
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-label probability for a pair with cosine similarity `s`.
#[inline]
pub fn pair_prob(s: f64, tau: f64) -> f64 {
    sigmoid(s / tau)
}

fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Pairwise loss over raw (unnormalised) features and its gradient with
/// respect to those features.
pub fn pair_loss_and_grad(features: &Tensor2, labels: &[usize], tau: f64) -> Result<(f64, Tensor2)> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape("labels do not match feature rows".into()));
    }
    let dim = features.cols();
    let mut units = Tensor2::zeros(n, dim);
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let r = features.row(i);
        let nr = norm(r);
        if !(nr > 0.0) || !nr.is_finite() {
            return Err(Error::Numeric(format!("feature row {i} has norm {nr}")));
        }
        norms[i] = nr;
        for (u, v) in units.row_mut(i).iter_mut().zip(r) {
            *u = v / nr;
        }
    }
    let scale = 1.0 / (n * n) as f64;
    let mut loss = 0.0;
    // d loss / d unit_i accumulated over both pair orders.
    // d loss / d s_ij, then d loss / d unit_i = sum_j (G_ij + G_ji) unit_j.
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = dot(units.row(i), units.row(j));
            let p = pair_prob(s, tau);
            let target = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            loss += bce(p, target);
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                g[i * n + j] = scale * (p - target) / tau;
            }
        }
    }
    let mut d_units = Tensor2::zeros(n, dim);
    for i in 0..n {
        let dst = d_units.row_mut(i);
        for j in 0..n {
            let w = g[i * n + j] + g[j * n + i];
            if w != 0.0 {
                for (d, u) in dst.iter_mut().zip(units.row(j)) {
                    *d += w * u;
                }
            }
        }
    }
    // Through normalisation: dz = (I - u u^T) du / ||z||.
    let mut grad = Tensor2::zeros(n, dim);
    for i in 0..n {
        let u = units.row(i);
        let du = d_units.row(i);
        let radial = dot(u, du);
        for ((g, &dv), &uv) in grad.row_mut(i).iter_mut().zip(du).zip(u) {
            *g = (dv - radial * uv) / norms[i];
        }
    }
    Ok((loss * scale, grad))
}

impl MetricModel {
    pub fn new(input_dim: usize, config: &MetricConfig) -> Result<Self> {
        if !(config.tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be > 0, got {}", config.tau)));
        }
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(config.feature_dim);
        let mut rng = rng_for(config.seed, stream::METRIC_INIT);
        Ok(MetricModel {
            net: MlpParams::init(&dims, Activation::leaky(), Activation::Identity, &mut rng)?,
            tau: config.tau,
            feature_dim: config.feature_dim,
        })
    }

    pub fn from_net(net: MlpParams, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be > 0, got {tau}")));
        }
        let feature_dim = net.output_dim();
        Ok(MetricModel { net, tau, feature_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
}

fn batch_tensor(batch: &[&LabeledExample], dim: usize) -> Result<Tensor2> {
    let mut data = Vec::with_capacity(batch.len() * dim);
    for e in batch {
        if e.x.len() != dim {
            return Err(Error::Shape(format!("example has dim {}, model expects {dim}", e.x.len())));
        }
        data.extend_from_slice(&e.x);
    }
    Tensor2::from_vec(batch.len(), dim, data)
}

/// Mean pairwise BCE over a batch.
pub fn batch_loss_la(model: &MetricModel, batch: &[LabeledExample]) -> Result<f64> {
    let refs: Vec<&LabeledExample> = batch.iter().collect();
    let x = batch_tensor(&refs, model.input_dim())?;
    let z = model.net.forward(&x)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.y).collect();
    Ok(pair_loss_and_grad(&z, &labels, model.tau)?.0)
}

/// Loss and parameter gradients of the pairwise objective on one batch.
pub fn batch_loss_la_grad(
    model: &MetricModel,
    batch: &[LabeledExample],
) -> Result<(f64, crate::numerics::MlpGrads)> {
    let refs: Vec<&LabeledExample> = batch.iter().collect();
    batch_grad_refs(model, &refs)
}

fn batch_grad_refs(model: &MetricModel, batch: &[&LabeledExample]) -> Result<(f64, crate::numerics::MlpGrads)> {
    let x = batch_tensor(batch, model.input_dim())?;
    let (z, cache) = model.net.forward_cached(&x)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.y).collect();
    let (loss, dz) = pair_loss_and_grad(&z, &labels, model.tau)?;
    let (grads, _) = model.net.backward_cached(&cache, &dz)?;
    Ok((loss, grads))
}

/// Train the extractor with minibatch SGD on the pairwise objective.
pub fn train_metric(sources: &Dataset, config: &MetricConfig) -> Result<(MetricModel, LossHistory)> {
    if sources.classes_present().len() < 2 {
        return Err(Error::InvalidInput("metric training needs at least 2 classes".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be > 0".into()));
    }
    let mut model = MetricModel::new(sources.dim, config)?;
    let mut opt = OptimState::new(OptimKind::sgd(config.lr, config.momentum))?;
    let mut order: Vec<usize> = (0..sources.len()).collect();
    let mut rng = rng_for(derive_seed(config.seed, stream::METRIC_SHUFFLE), 0);
    let mut history = vec![epoch_loss(&model, sources, &order, config.batch_size)?];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &sources.examples[i]).collect();
            let (loss, grads) = batch_grad_refs(&model, &batch)?;
            opt.step(&mut model.net, &grads)?;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((model, LossHistory(history)))
}

fn epoch_loss(model: &MetricModel, data: &Dataset, order: &[usize], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<LabeledExample> = chunk.iter().map(|&i| data.examples[i].clone()).collect();
        total += batch_loss_la(model, &batch)?;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Raw extractor outputs for every example.
pub fn embed_raw(net: &MlpParams, dataset: &Dataset) -> Result<Tensor2> {
    if dataset.is_empty() {
        return Ok(Tensor2::zeros(0, net.output_dim()));
    }
    net.forward(&dataset.inputs())
}

/// Embed a dataset into a unit-norm feature bank.
pub fn embed(model: &MetricModel, dataset: &Dataset) -> Result<FeatureBank> {
    embed_with(&model.net, dataset, true)
}

/// Embed with any extractor network, optionally skipping normalisation.
pub fn embed_with(net: &MlpParams, dataset: &Dataset, normalize: bool) -> Result<FeatureBank> {
    let mut features = embed_raw(net, dataset)?;
    if normalize {
        normalize_rows(&mut features)?;
    }
    Ok(FeatureBank {
        features,
        labels: dataset.labels(),
        domains: dataset.domains(),
        num_classes: dataset.num_classes,
    })
}

/// Scale every row to unit L2 norm.
pub fn normalize_rows(t: &mut Tensor2) -> Result<()> {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let n = norm(row);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numeric(format!("example {i} maps to a zero or non-finite feature")));
        }
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(())
}

pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric("cannot normalise a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Index of the row with the highest cosine similarity to `query`; ties go
/// to the lowest index. Zero rows never win.
pub fn nearest_row(rows: &Tensor2, query: &[f64]) -> Result<usize> {
    if query.len() != rows.cols() {
        return Err(Error::Shape(format!("query has {} values, rows have {}", query.len(), rows.cols())));
    }
    if rows.rows() == 0 {
        return Err(Error::InvalidInput("nearest row of an empty set".into()));
    }
    let qn = norm(query);
    if !(qn > 0.0) {
        return Err(Error::Numeric("nearest-row query has zero norm".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, row) in rows.iter_rows().enumerate() {
        let rn = norm(row);
        let s = if rn > 0.0 { dot(query, row) / (qn * rn) } else { f64::NEG_INFINITY };
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(best.1)
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.features.iter_rows().all(|r| (norm(r) - 1.0).abs() <= 1e-9)
    }

    pub fn select(&self, idx: &[usize]) -> FeatureBank {
        FeatureBank {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn filter_domain(&self, domain: usize) -> FeatureBank {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.domains[i] == domain).collect();
        self.select(&idx)
    }

    pub fn classes_present(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        for &y in &self.labels {
            if y < seen.len() {
                seen[y] = true;
            }
        }
        (0..self.num_classes).filter(|&c| seen[c]).collect()
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pair_prob_is_scale_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
            let p1 = pair_prob(cosine_sim(&a, &b).unwrap(), 0.1);
            let p2 = pair_prob(cosine_sim(&scaled, &b).unwrap(), 0.1);
            prop_assert!((p1 - p2).abs() < 1e-9);
        }

        #[test]
        fn pair_prob_is_monotone(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0, tau in 0.01f64..2.0) {
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(pair_prob(lo, tau) <= pair_prob(hi, tau));
            let p = pair_prob(s1, tau);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(s1 / tau < 30.0 || p > 0.5);
        }
    }
}
