//! Scripted study designs on the synthetic benchmark: ablation grid, sampler
//! comparison, data-fraction sweep, single-source generalisation, β and ε
//! sweeps and few-shot adaptation. Every run is a pure function of the plan.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classifier::{accuracy, finetune_fewshot, predict, FewShotConfig};
use crate::data::{gen_two_moons, subsample_fraction, Dataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::generative::SamplerKind;
use crate::pipeline::{
    attach_sampler, deepall_projection_pipeline, train_extractor_stage, DeepAllBaseline, Pipeline, PipelineConfig,
};
use crate::projection::{infer_all, sweep_epsilon, EpsilonMode, InferResult};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Extractor, sampler and projection.
    Full,
    /// Projection over Deep All features.
    NoFTheta,
    /// Extractor features classified directly.
    NoGPhi,
    DeepAll,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::DeepAll, Variant::NoGPhi, Variant::NoFTheta, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFTheta => "no_f_theta",
            Variant::NoGPhi => "no_G_phi",
            Variant::DeepAll => "deepall",
        }
    }

    pub fn uses_sampler(self) -> bool {
        matches!(self, Variant::Full | Variant::NoFTheta)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_f_theta" => Ok(Variant::NoFTheta),
            "no_G_phi" | "no_g_phi" => Ok(Variant::NoGPhi),
            "deepall" => Ok(Variant::DeepAll),
            _ => Err(Error::InvalidInput(format!("unknown variant {s:?}"))),
        }
    }
}

/// Rotated two-moons domains with a source/target partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Rotation of every domain, indexed by domain id.
    pub angles: Vec<f64>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub n_per_domain: usize,
    pub noise_sd: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            angles: vec![0.0, 15.0, 30.0, 45.0],
            sources: vec![0, 1, 2],
            targets: vec![3],
            n_per_domain: 300,
            noise_sd: 0.08,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.angles.len();
        if self.sources.is_empty() || self.targets.is_empty() {
            return Err(Error::InvalidInput("benchmark needs source and target domains".into()));
        }
        if let Some(d) = self.sources.iter().chain(&self.targets).find(|&&d| d >= n) {
            return Err(Error::InvalidInput(format!("domain {d} out of range for {n} angles")));
        }
        if self.sources.iter().any(|d| self.targets.contains(d)) {
            return Err(Error::InvalidInput("a domain cannot be both source and target".into()));
        }
        Ok(())
    }

    pub fn shift_specs(&self) -> Vec<ShiftSpec> {
        self.angles
            .iter()
            .enumerate()
            .map(|(i, &a)| ShiftSpec::rotation(a, i as u64))
            .collect()
    }

    /// The full dataset for one seed.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        gen_two_moons(&self.shift_specs(), self.n_per_domain, self.noise_sd, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub data: BenchmarkSpec,
    pub variants: Vec<Variant>,
    pub samplers: Vec<SamplerKind>,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
    pub fewshot: FewShotConfig,
    /// Worker cap for projection; `None` defers to `TARPRO_THREADS`.
    pub threads: Option<usize>,
    /// Key-value overrides that produced `pipeline`, kept for the record.
    pub overrides: Vec<(String, String)>,
}

impl ExperimentPlan {
    pub fn new(name: &str) -> Self {
        ExperimentPlan {
            name: name.to_string(),
            data: BenchmarkSpec::default(),
            variants: Variant::ALL.to_vec(),
            samplers: vec![SamplerKind::Vae],
            seeds: (0..5).collect(),
            pipeline: PipelineConfig::default(),
            fewshot: FewShotConfig::default(),
            threads: None,
            overrides: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("plan has no seeds".into()));
        }
        if self.samplers.is_empty() && self.variants.iter().any(|v| v.uses_sampler()) {
            return Err(Error::InvalidInput("projection variants need a sampler".into()));
        }
        self.pipeline.projection.validate()
    }

    fn sampler(&self) -> SamplerKind {
        self.samplers.first().copied().unwrap_or(self.pipeline.sampler)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub target: String,
    pub variant: Variant,
    /// Swept parameter, e.g. `beta=0.05`.
    pub setting: Option<String>,
    pub sampler: Option<SamplerKind>,
    pub seed: u64,
    pub accuracy: f64,
}

impl ResultRow {
    pub fn variant_label(&self) -> String {
        match &self.setting {
            Some(s) => format!("{}@{s}", self.variant.name()),
            None => self.variant.name().to_string(),
        }
    }

    pub fn sampler_label(&self) -> &'static str {
        self.sampler.map_or("none", SamplerKind::name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub experiment: String,
    pub target: String,
    pub variant: String,
    pub sampler: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl ResultTable {
    /// Mean and sd per (experiment, target, variant, sampler), in order of
    /// first appearance.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order = Vec::new();
        let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (
                r.experiment.clone(),
                r.target.clone(),
                r.variant_label(),
                r.sampler_label().to_string(),
            );
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r.accuracy);
        }
        order
            .into_iter()
            .map(|k| {
                let v = &groups[&k];
                let (mean, sd) = mean_sd(v);
                AggregateRow {
                    experiment: k.0,
                    target: k.1,
                    variant: k.2,
                    sampler: k.3,
                    n: v.len(),
                    mean,
                    sd,
                }
            })
            .collect()
    }

    /// Mean accuracy over every row whose variant label and sampler match.
    pub fn mean_of(&self, variant_label: &str, sampler: Option<SamplerKind>) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant_label() == variant_label && (sampler.is_none() || r.sampler == sampler))
            .map(|r| r.accuracy)
            .collect();
        if v.is_empty() {
            None
        } else {
            Some(mean_sd(&v).0)
        }
    }

    /// `experiment,target,variant,sampler,seed,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,target,variant,sampler,seed,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.experiment,
                r.target,
                r.variant_label(),
                r.sampler_label(),
                r.seed,
                r.accuracy
            );
        }
        s
    }

    /// `experiment,target,variant,sampler,n,mean,sd` rows.
    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("experiment,target,variant,sampler,n,mean,sd\n");
        for a in self.aggregate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                a.experiment, a.target, a.variant, a.sampler, a.n, a.mean, a.sd
            );
        }
        s
    }
}

/// Source/target split of one seed's data.
struct SeedData {
    sources: Dataset,
    targets: Vec<(String, Dataset)>,
}

fn seed_data(spec: &BenchmarkSpec, seed: u64) -> Result<SeedData> {
    let all = spec.generate(seed)?;
    Ok(SeedData {
        sources: all.filter_domains(&spec.sources),
        targets: spec
            .targets
            .iter()
            .map(|&t| (all.domain_names[t].clone(), all.filter_domains(&[t])))
            .collect(),
    })
}

fn projected_accuracy(results: &[InferResult], truth: &[usize]) -> f64 {
    let pred: Vec<usize> = results.iter().map(|r| r.label).collect();
    accuracy(&pred, truth)
}

/// Accuracy of a pipeline on a target domain; with a sampler the targets are
/// projected, without one their features are classified directly.
pub fn pipeline_accuracy(pipeline: &Pipeline, targets: &Dataset, threads: Option<usize>) -> Result<f64> {
    match pipeline.sampler {
        Some(_) => {
            let res = infer_all(targets, pipeline, &pipeline.config.projection, threads)?;
            Ok(projected_accuracy(&res, &targets.labels()))
        }
        None => {
            let bank = pipeline.embed(targets)?;
            Ok(accuracy(&predict(&pipeline.classifier, &bank.features)?, &bank.labels))
        }
    }
}

fn row(plan: &ExperimentPlan, target: &str, variant: Variant, sampler: Option<SamplerKind>, seed: u64, acc: f64) -> ResultRow {
    ResultRow {
        experiment: plan.name.clone(),
        target: target.to_string(),
        variant,
        setting: None,
        sampler,
        seed,
        accuracy: acc,
    }
}

/// Run `cell` for every seed in parallel and concatenate rows in seed order.
fn per_seed<F>(plan: &ExperimentPlan, cell: F) -> Result<ResultTable>
where
    F: Fn(u64) -> Result<Vec<ResultRow>> + Sync,
{
    plan.validate()?;
    let parts: Vec<Vec<ResultRow>> = plan.seeds.par_iter().map(|&s| cell(s)).collect::<Result<_>>()?;
    Ok(ResultTable {
        rows: parts.into_iter().flatten().collect(),
    })
}

fn ablation_rows(plan: &ExperimentPlan, sources: &Dataset, targets: &[(String, Dataset)], seed: u64) -> Result<Vec<ResultRow>> {
    let cfg = plan.pipeline.with_seed(seed);
    let kind = plan.sampler();
    let mut rows = Vec::new();
    let need_extractor = plan.variants.iter().any(|v| matches!(v, Variant::Full | Variant::NoGPhi));
    let need_deepall = plan.variants.iter().any(|v| matches!(v, Variant::DeepAll | Variant::NoFTheta));
    let extractor = if need_extractor {
        let (p, _, bank) = train_extractor_stage(sources, &cfg)?;
        let mut full = p.clone();
        if plan.variants.contains(&Variant::Full) {
            attach_sampler(&mut full, kind, &bank)?;
        }
        Some((p, full))
    } else {
        None
    };
    let deepall = if need_deepall {
        let (b, _) = DeepAllBaseline::train(sources, &cfg)?;
        let nof = if plan.variants.contains(&Variant::NoFTheta) {
            let mut c = cfg.clone();
            c.sampler = kind;
            Some(deepall_projection_pipeline(&b, sources, &c)?.0)
        } else {
            None
        };
        Some((b, nof))
    } else {
        None
    };
    for (name, t) in targets {
        for &v in &plan.variants {
            let (acc, sampler) = match v {
                Variant::DeepAll => (deepall.as_ref().expect("trained").0.accuracy(t)?, None),
                Variant::NoFTheta => {
                    let p = deepall.as_ref().and_then(|d| d.1.as_ref()).expect("trained");
                    (pipeline_accuracy(p, t, plan.threads)?, Some(kind))
                }
                Variant::NoGPhi => (pipeline_accuracy(&extractor.as_ref().expect("trained").0, t, plan.threads)?, None),
                Variant::Full => (pipeline_accuracy(&extractor.as_ref().expect("trained").1, t, plan.threads)?, Some(kind)),
            };
            rows.push(row(plan, name, v, sampler, seed, acc));
        }
    }
    Ok(rows)
}

/// Every requested variant on every target domain for every seed.
pub fn run_ablation(plan: &ExperimentPlan) -> Result<ResultTable> {
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        ablation_rows(plan, &d.sources, &d.targets, seed)
    })
}

/// Each requested sampler behind one shared extractor and classifier.
pub fn run_sampler_comparison(plan: &ExperimentPlan) -> Result<ResultTable> {
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        let cfg = plan.pipeline.with_seed(seed);
        let (base, _, bank) = train_extractor_stage(&d.sources, &cfg)?;
        let mut rows = Vec::new();
        for &kind in &plan.samplers {
            let mut p = base.clone();
            attach_sampler(&mut p, kind, &bank)?;
            for (name, t) in &d.targets {
                rows.push(row(plan, name, Variant::Full, Some(kind), seed, pipeline_accuracy(&p, t, plan.threads)?));
            }
        }
        Ok(rows)
    })
}

/// Full pipeline trained on a stratified fraction of every source domain
/// and tested on the whole target domain.
pub fn run_fraction_sweep(plan: &ExperimentPlan, fractions: &[f64]) -> Result<ResultTable> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidInput(format!("fraction {f} outside (0, 1]")));
    }
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        let mut rows = Vec::new();
        for &f in fractions {
            let sources = subsample_fraction(&d.sources, f, derive_seed(seed, stream::SPLIT))?;
            let cfg = plan.pipeline.with_seed(seed);
            let (mut p, _, bank) = train_extractor_stage(&sources, &cfg)?;
            attach_sampler(&mut p, plan.sampler(), &bank)?;
            for (name, t) in &d.targets {
                let mut r = row(plan, name, Variant::Full, Some(plan.sampler()), seed, pipeline_accuracy(&p, t, plan.threads)?);
                r.setting = Some(format!("fraction={f}"));
                rows.push(r);
            }
        }
        Ok(rows)
    })
}

/// Train on each source domain alone and evaluate on every other domain.
pub fn run_single_source(plan: &ExperimentPlan) -> Result<ResultTable> {
    per_seed(plan, |seed| {
        let all = plan.data.generate(seed)?;
        let mut rows = Vec::new();
        for &s in &plan.data.sources {
            let sources = all.filter_domains(&[s]);
            let targets: Vec<(String, Dataset)> = (0..plan.data.angles.len())
                .filter(|&d| d != s)
                .map(|d| (all.domain_names[d].clone(), all.filter_domains(&[d])))
                .collect();
            let mut part = ablation_rows(plan, &sources, &targets, seed)?;
            for r in &mut part {
                r.setting = Some(format!("source={}", all.domain_names[s]));
            }
            rows.extend(part);
        }
        Ok(rows)
    })
}

/// Full pipeline with each projection step size.
pub fn run_beta_sweep(plan: &ExperimentPlan, betas: &[f64]) -> Result<ResultTable> {
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        let cfg = plan.pipeline.with_seed(seed);
        let (mut p, _, bank) = train_extractor_stage(&d.sources, &cfg)?;
        attach_sampler(&mut p, plan.sampler(), &bank)?;
        let mut rows = Vec::new();
        for &beta in betas {
            let mut pc = p.config.projection.clone();
            pc.beta = beta;
            for (name, t) in &d.targets {
                let res = infer_all(t, &p, &pc, plan.threads)?;
                let mut r = row(plan, name, Variant::Full, Some(plan.sampler()), seed, projected_accuracy(&res, &t.labels()));
                r.setting = Some(format!("beta={beta}"));
                rows.push(r);
            }
        }
        Ok(rows)
    })
}

/// Accuracy when every target stops `eps` iterations away from its elbow.
pub fn run_epsilon_sweep(plan: &ExperimentPlan, epsilons: &[f64], mode: EpsilonMode) -> Result<ResultTable> {
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        let cfg = plan.pipeline.with_seed(seed);
        let (mut p, _, bank) = train_extractor_stage(&d.sources, &cfg)?;
        attach_sampler(&mut p, plan.sampler(), &bank)?;
        let mut rows = Vec::new();
        for (name, t) in &d.targets {
            let res = infer_all(t, &p, &p.config.projection, plan.threads)?;
            let accs = sweep_epsilon(&res, &t.labels(), epsilons, mode, &p)?;
            for (&eps, acc) in epsilons.iter().zip(accs) {
                let mut r = row(plan, name, Variant::Full, Some(plan.sampler()), seed, acc);
                r.setting = Some(format!("eps={eps}"));
                rows.push(r);
            }
        }
        Ok(rows)
    })
}

/// Class-balanced, nested draw of labelled target examples: the first `k`
/// indices form the size-`k` set for every `k`.
pub fn fewshot_order(targets: &Dataset, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, stream::FEWSHOT);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); targets.num_classes];
    for (i, e) in targets.examples.iter().enumerate() {
        by_class[e.y].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut round = 0;
    while out.len() < targets.len() {
        for c in &by_class {
            if let Some(&i) = c.get(round) {
                out.push(i);
            }
        }
        round += 1;
    }
    out
}

/// Fine-tune on `|T|` labelled target examples for each requested size and
/// evaluate on the target examples outside the largest labelled set. Size 0
/// is the unadapted pipeline.
pub fn run_fewshot(plan: &ExperimentPlan, sizes: &[usize]) -> Result<ResultTable> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    per_seed(plan, |seed| {
        let d = seed_data(&plan.data, seed)?;
        let cfg = plan.pipeline.with_seed(seed);
        let (mut p, _, bank) = train_extractor_stage(&d.sources, &cfg)?;
        attach_sampler(&mut p, plan.sampler(), &bank)?;
        let mut rows = Vec::new();
        for (name, t) in &d.targets {
            if largest >= t.len() {
                return Err(Error::InvalidInput(format!("|T| = {largest} leaves no target examples to test on")));
            }
            let order = fewshot_order(t, derive_seed(seed, stream::FEWSHOT));
            let mut held: Vec<usize> = order[largest..].to_vec();
            held.sort_unstable();
            let test = t.select(&held);
            for &k in sizes {
                let adapted = finetune_fewshot(&p, &d.sources, &t.select(&order[..k]), &plan.fewshot, seed)?;
                let mut r = row(plan, name, Variant::Full, Some(plan.sampler()), seed, pipeline_accuracy(&adapted, &test, plan.threads)?);
                r.setting = Some(format!("shots={k}"));
                rows.push(r);
            }
        }
        Ok(rows)
    })
}
