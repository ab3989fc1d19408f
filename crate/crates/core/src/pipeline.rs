//! Training half of the method: extractor, manifold sampler and classifier
//! trained on pooled source domains.

use crate::classifier::{train_classifier, train_deepall, ClassifierConfig, ClassifierModel, DeepAllConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::generative::{train_gan, train_vae, GanConfig, KnnSampler, Sampler, SamplerKind, VaeConfig};
use crate::metric::{embed_with, train_metric, FeatureBank, LossHistory, MetricConfig, MetricModel};
use crate::numerics::Tensor2;
use crate::projection::ProjectionConfig;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub metric: MetricConfig,
    pub vae: VaeConfig,
    pub gan: GanConfig,
    pub classifier: ClassifierConfig,
    pub projection: ProjectionConfig,
    pub sampler: SamplerKind,
    /// Store and consume unit-norm features.
    pub normalize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            metric: MetricConfig::default(),
            vae: VaeConfig::default(),
            gan: GanConfig::default(),
            classifier: ClassifierConfig::default(),
            projection: ProjectionConfig::default(),
            sampler: SamplerKind::Vae,
            normalize: true,
        }
    }
}

impl PipelineConfig {
    /// Copy with every component seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> PipelineConfig {
        let mut c = self.clone();
        c.seed = seed;
        c.metric.seed = derive_seed(seed, 101);
        c.vae.seed = derive_seed(seed, 102);
        c.gan.seed = derive_seed(seed, 103);
        c.classifier.seed = derive_seed(seed, 104);
        c.projection.init_seed = derive_seed(seed, 105);
        c
    }

    pub fn deepall(&self) -> DeepAllConfig {
        DeepAllConfig {
            backbone: self.metric.clone(),
            head: self.classifier.clone(),
            freeze_backbone: false,
        }
    }
}

/// Trained models used at inference. All parameters stay fixed while
/// projecting.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub metric: MetricModel,
    pub sampler: Option<Sampler>,
    pub classifier: ClassifierModel,
    pub normalize: bool,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLogs {
    pub metric: LossHistory,
    pub sampler: LossHistory,
    pub classifier_accuracy: Vec<f64>,
}

impl Pipeline {
    /// Extractor features for every example of `data`.
    pub fn embed(&self, data: &Dataset) -> Result<FeatureBank> {
        embed_with(&self.metric.net, data, self.normalize)
    }

    /// Combined fingerprint of every parameter, for before/after checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = self.metric.net.fingerprint();
        h = h.rotate_left(7) ^ self.classifier.net.fingerprint();
        if let Some(s) = &self.sampler {
            h = h.rotate_left(7) ^ s.fingerprint();
        }
        h
    }
}

/// Fit the sampler of the requested kind on a bank.
pub fn fit_sampler(kind: SamplerKind, bank: &FeatureBank, config: &PipelineConfig) -> Result<(Sampler, LossHistory)> {
    Ok(match kind {
        SamplerKind::Vae => {
            let (m, h) = train_vae(bank, &config.vae)?;
            (Sampler::Vae(m), h)
        }
        SamplerKind::Gan => {
            let (m, h) = train_gan(bank, &config.gan)?;
            (Sampler::Gan(m), LossHistory(h.gen_loss))
        }
        SamplerKind::Knn => (Sampler::Knn(KnnSampler::new(bank.clone())?), LossHistory::default()),
    })
}

/// Extractor, sampler and classifier on the pooled sources.
pub fn train_pipeline(sources: &Dataset, config: &PipelineConfig) -> Result<(Pipeline, TrainingLogs)> {
    let (mut pipeline, mut logs, bank) = train_extractor_stage(sources, config)?;
    logs.sampler = attach_sampler(&mut pipeline, config.sampler, &bank)?;
    Ok((pipeline, logs))
}

/// Extractor and classifier only; the returned bank holds the source
/// features for fitting samplers later.
pub fn train_extractor_stage(sources: &Dataset, config: &PipelineConfig) -> Result<(Pipeline, TrainingLogs, FeatureBank)> {
    let (metric, metric_hist) = train_metric(sources, &config.metric)?;
    let bank = embed_with(&metric.net, sources, config.normalize)?;
    let (p, logs) = finish_pipeline(metric, metric_hist, &bank, config, false)?;
    Ok((p, logs, bank))
}

/// Fit a sampler on `bank` and install it in the pipeline.
pub fn attach_sampler(pipeline: &mut Pipeline, kind: SamplerKind, bank: &FeatureBank) -> Result<LossHistory> {
    let (s, h) = fit_sampler(kind, bank, &pipeline.config)?;
    pipeline.sampler = Some(s);
    pipeline.config.sampler = kind;
    Ok(h)
}

/// The Deep All network: backbone plus the head that classifies its raw outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepAllBaseline {
    pub backbone: MetricModel,
    pub head: ClassifierModel,
}

impl DeepAllBaseline {
    pub fn train(sources: &Dataset, config: &PipelineConfig) -> Result<(DeepAllBaseline, Vec<f64>)> {
        let (backbone, head, acc) = train_deepall(sources, &config.deepall())?;
        Ok((DeepAllBaseline { backbone, head }, acc))
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        let z = embed_with(&self.backbone.net, data, false)?;
        crate::classifier::predict(&self.head, &z.features)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(crate::classifier::accuracy(&self.predict(data)?, &data.labels()))
    }
}

/// Projection over the Deep All backbone's features (the "no extractor"
/// ablation): its normalised features get their own sampler and classifier.
pub fn deepall_projection_pipeline(
    baseline: &DeepAllBaseline,
    sources: &Dataset,
    config: &PipelineConfig,
) -> Result<(Pipeline, TrainingLogs)> {
    let bank = embed_with(&baseline.backbone.net, sources, config.normalize)?;
    finish_pipeline(baseline.backbone.clone(), LossHistory::default(), &bank, config, true)
}

/// Deep All backbone in place of the extractor (the "no extractor" ablation).
pub fn train_deepall_pipeline(sources: &Dataset, config: &PipelineConfig) -> Result<(Pipeline, TrainingLogs)> {
    let (baseline, acc) = DeepAllBaseline::train(sources, config)?;
    let mut out = deepall_projection_pipeline(&baseline, sources, config)?;
    out.1.classifier_accuracy = acc;
    Ok(out)
}

pub(crate) fn finish_pipeline(
    metric: MetricModel,
    metric_hist: LossHistory,
    bank: &FeatureBank,
    config: &PipelineConfig,
    with_sampler: bool,
) -> Result<(Pipeline, TrainingLogs)> {
    let (classifier, clf_hist) = train_classifier(bank, &config.classifier)?;
    let (sampler, sampler_hist) = if with_sampler {
        let (s, h) = fit_sampler(config.sampler, bank, config)?;
        (Some(s), h)
    } else {
        (None, LossHistory::default())
    };
    Ok((
        Pipeline {
            metric,
            sampler,
            classifier,
            normalize: config.normalize,
            config: config.clone(),
        },
        TrainingLogs {
            metric: metric_hist,
            sampler: sampler_hist,
            classifier_accuracy: clf_hist,
        },
    ))
}

/// Classify feature rows with the pipeline classifier.
pub fn classify_features(pipeline: &Pipeline, features: &Tensor2) -> Result<Vec<usize>> {
    crate::classifier::predict(&pipeline.classifier, features)
}
