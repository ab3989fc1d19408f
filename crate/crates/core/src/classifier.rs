//! Shallow classifier on feature-bank rows, the Deep All baseline, and
//! few-shot fine-tuning of a trained pipeline.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generative::{vae_loss_grad, KnnSampler, Sampler};
use crate::metric::{batch_loss_la_grad, embed_with, FeatureBank, MetricConfig, MetricModel};
use crate::numerics::{Activation, MlpGrads, MlpParams, OptimKind, OptimState, Tensor2};
use crate::pipeline::Pipeline;
use crate::rng::{rng_for, stream, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Feature -> hidden -> logits.
    pub net: MlpParams,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            lr: 0.003,
            epochs: 30,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Deep All: backbone with the extractor's architecture plus the classifier
/// head, trained end to end with cross-entropy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeepAllConfig {
    pub backbone: MetricConfig,
    pub head: ClassifierConfig,
    /// Keep the initial backbone fixed and train only the head.
    pub freeze_backbone: bool,
}


#[derive(Debug, Clone, PartialEq)]
pub struct FewShotConfig {
    pub epochs: usize,
    /// Multiplier on every base learning rate.
    pub lr_scale: f64,
    /// Source examples mixed into every fine-tuning step.
    pub source_batch: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            epochs: 20,
            lr_scale: 0.1,
            source_batch: 64,
        }
    }
}

impl ClassifierModel {
    pub fn new(feature_dim: usize, num_classes: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput("a classifier needs at least 2 classes".into()));
        }
        Ok(ClassifierModel {
            net: MlpParams::init(
                &[feature_dim, hidden, num_classes],
                Activation::leaky(),
                Activation::Identity,
                rng,
            )?,
            num_classes,
        })
    }

    pub fn logits(&self, features: &Tensor2) -> Result<Tensor2> {
        self.net.forward(features)
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("labels do not match logit rows".into()));
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::InvalidInput(format!("label {y} outside {} classes", logits.cols())));
        }
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + sum.ln();
        loss += (log_z - row[y]) / n;
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[k] - log_z).exp();
            *g = (p - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss, grad))
}

/// Argmax of each logit row; ties go to the lowest class id.
pub fn argmax_rows(logits: &Tensor2) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &ClassifierModel, features: &Tensor2) -> Result<Vec<usize>> {
    if features.rows() == 0 {
        return Ok(Vec::new());
    }
    Ok(argmax_rows(&model.logits(features)?))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

pub fn evaluate(model: &ClassifierModel, bank: &FeatureBank) -> Result<f64> {
    Ok(accuracy(&predict(model, &bank.features)?, &bank.labels))
}

fn check_bank(bank: &FeatureBank, num_classes: usize) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::InvalidInput("classifier training needs a nonempty bank".into()));
    }
    let present = bank.classes_present();
    if num_classes < 2 || present.len() != num_classes {
        let missing: Vec<usize> = (0..num_classes).filter(|c| !present.contains(c)).collect();
        return Err(Error::InvalidInput(format!("classes {missing:?} are absent from the bank")));
    }
    Ok(())
}

fn head_step(
    head: &mut ClassifierModel,
    opt: &mut OptimState,
    x: &Tensor2,
    labels: &[usize],
) -> Result<(f64, Tensor2)> {
    let (logits, cache) = head.net.forward_cached(x)?;
    let (loss, dlogits) = cross_entropy_grad(&logits, labels)?;
    let (g, dx) = head.net.backward_cached(&cache, &dlogits)?;
    opt.step(&mut head.net, &g)?;
    Ok((loss, dx))
}

/// Train the classifier head with Adam on softmax cross-entropy. The returned
/// history holds train accuracy on the whole bank after each epoch (entry 0
/// before training).
pub fn train_classifier(bank: &FeatureBank, config: &ClassifierConfig) -> Result<(ClassifierModel, Vec<f64>)> {
    check_bank(bank, bank.num_classes)?;
    let mut rng = rng_for(config.seed, stream::CLASSIFIER);
    let mut head = ClassifierModel::new(bank.dim(), bank.num_classes, config.hidden, &mut rng)?;
    let mut opt = OptimState::new(OptimKind::adam(config.lr))?;
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut history = vec![evaluate(&head, bank)?];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let x = bank.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| bank.labels[i]).collect();
            head_step(&mut head, &mut opt, &x, &labels)?;
        }
        history.push(evaluate(&head, bank)?);
    }
    Ok((head, history))
}

/// Deep All baseline. Returns the backbone (as an extractor model) and the
/// head that classifies its raw outputs, plus per-epoch pooled train accuracy.
pub fn train_deepall(sources: &Dataset, config: &DeepAllConfig) -> Result<(MetricModel, ClassifierModel, Vec<f64>)> {
    let present = sources.classes_present();
    if present.len() < 2 || present.len() != sources.num_classes {
        return Err(Error::InvalidInput("Deep All needs every class present and at least 2".into()));
    }
    let mut backbone = MetricModel::new(sources.dim, &config.backbone)?;
    let mut rng = rng_for(config.head.seed, stream::CLASSIFIER);
    let mut head = ClassifierModel::new(backbone.feature_dim, sources.num_classes, config.head.hidden, &mut rng)?;
    let mut head_opt = OptimState::new(OptimKind::adam(config.head.lr))?;
    let mut bb_opt = OptimState::new(OptimKind::sgd(config.backbone.lr, config.backbone.momentum))?;
    let inputs = sources.inputs();
    let labels = sources.labels();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    let eval = |bb: &MetricModel, h: &ClassifierModel| -> Result<f64> {
        let z = bb.net.forward(&inputs)?;
        Ok(accuracy(&predict(h, &z)?, &labels))
    };
    let epochs = if config.freeze_backbone {
        config.head.epochs
    } else {
        config.backbone.epochs
    };
    let mut history = vec![eval(&backbone, &head)?];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.head.batch_size.max(1)) {
            let x = inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (z, cache) = backbone.net.forward_cached(&x)?;
            let (_, dz) = head_step(&mut head, &mut head_opt, &z, &y)?;
            if !config.freeze_backbone {
                let (g, _) = backbone.net.backward_cached(&cache, &dz)?;
                bb_opt.step(&mut backbone.net, &g)?;
            }
        }
        history.push(eval(&backbone, &head)?);
    }
    Ok((backbone, head, history))
}

/// Fine-tune every component of a trained pipeline on a handful of labelled
/// target examples. Each step uses all targets plus a random batch of source
/// examples so the source manifold is not forgotten. After the extractor
/// moves, sources are re-embedded; the VAE and classifier are then tuned on
/// the new features, a 1-NN bank is rebuilt with the targets added, and a
/// GAN is left as is.
pub fn finetune_fewshot(
    pipeline: &Pipeline,
    sources: &Dataset,
    targets: &Dataset,
    config: &FewShotConfig,
    seed: u64,
) -> Result<Pipeline> {
    let mut out = pipeline.clone();
    if config.epochs == 0 || targets.is_empty() {
        return Ok(out);
    }
    if !(config.lr_scale > 0.0) {
        return Err(Error::InvalidInput(format!("lr_scale must be > 0, got {}", config.lr_scale)));
    }
    let cfg = &pipeline.config;
    let scale = config.lr_scale;
    let mut rng = rng_for(seed, stream::FEWSHOT);
    let mut order: Vec<usize> = (0..sources.len()).collect();
    let mut mixed = |rng: &mut Rng| -> Vec<usize> {
        order.shuffle(rng);
        order[..config.source_batch.min(order.len())].to_vec()
    };

    let mut m_opt = OptimState::new(OptimKind::sgd(cfg.metric.lr * scale, cfg.metric.momentum))?;
    for _ in 0..config.epochs {
        let mut batch = targets.examples.clone();
        batch.extend(mixed(&mut rng).into_iter().map(|i| sources.examples[i].clone()));
        let (_, g) = batch_loss_la_grad(&out.metric, &batch)?;
        m_opt.step(&mut out.metric.net, &g)?;
    }
    let src_bank = embed_with(&out.metric.net, sources, out.normalize)?;
    let tgt_bank = embed_with(&out.metric.net, targets, out.normalize)?;
    let pick = |bank: &FeatureBank, idx: &[usize]| -> Result<(Tensor2, Vec<usize>)> {
        let s = bank.select(idx);
        let f = tgt_bank.features.vstack(&s.features)?;
        let mut y = tgt_bank.labels.clone();
        y.extend(&s.labels);
        Ok((f, y))
    };

    match &mut out.sampler {
        Some(Sampler::Vae(vae)) => {
            let mut e_opt = OptimState::new(OptimKind::sgd(cfg.vae.lr * scale, cfg.vae.momentum))?;
            let mut d_opt = OptimState::new(OptimKind::sgd(cfg.vae.lr * scale, cfg.vae.momentum))?;
            for _ in 0..config.epochs {
                let (f, _) = pick(&src_bank, &mixed(&mut rng))?;
                let noise = gaussian(f.rows(), vae.latent_dim, &mut rng);
                let (_, ge, gd) = vae_loss_grad(vae, &f, &noise, cfg.vae.kl_weight)?;
                e_opt.step(&mut vae.encoder, &ge)?;
                d_opt.step(&mut vae.decoder, &gd)?;
            }
        }
        Some(Sampler::Knn(knn)) => {
            let mut merged = src_bank.clone();
            merged.features = merged.features.vstack(&tgt_bank.features)?;
            merged.labels.extend(&tgt_bank.labels);
            merged.domains.extend(&tgt_bank.domains);
            *knn = KnnSampler::new(merged)?;
        }
        Some(Sampler::Gan(_)) | None => {}
    }

    let mut c_opt = OptimState::new(OptimKind::adam(cfg.classifier.lr * scale))?;
    for _ in 0..config.epochs {
        let (f, y) = pick(&src_bank, &mixed(&mut rng))?;
        let (logits, cache) = out.classifier.net.forward_cached(&f)?;
        let (_, d) = cross_entropy_grad(&logits, &y)?;
        let (g, _): (MlpGrads, Tensor2) = out.classifier.net.backward_cached(&cache, &d)?;
        c_opt.step(&mut out.classifier.net, &g)?;
    }
    Ok(out)
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2 {
    use rand_distr::{Distribution, StandardNormal};
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}
