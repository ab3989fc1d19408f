//! Command-line front end.
//!
//! Precedence is defaults, then `--config`, then `--set key=value` flags.
//! Relative output paths are resolved under `work_dir`. Every command writes
//! a JSON manifest next to its main output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::checkpoint::{
    load_deepall, load_extractor, load_pipeline, load_sampler, save_deepall, save_metric, save_pipeline, save_sampler,
    Checkpoint,
};
use crate::classifier::{accuracy, predict, train_classifier};
use crate::config::{parse_config, RunConfig};
use crate::data::{load_csv, save_csv, Dataset, LabeledExample};
use crate::diagnostics::{
    a_distance, bound_terms, cluster_stats, cross_domain_cluster_stats, report_csv, ReportRow,
};
use crate::error::{Error, Result};
use crate::experiments::{
    run_ablation, run_beta_sweep, run_epsilon_sweep, run_fewshot, run_fraction_sweep, run_sampler_comparison,
    run_single_source, ResultTable,
};
use crate::generative::{KnnSampler, Sampler, SamplerKind};
use crate::metric::{embed_with, FeatureBank, LossHistory};
use crate::numerics::Tensor2;
use crate::pipeline::{fit_sampler, DeepAllBaseline, Pipeline};
use crate::projection::{infer_all, summary_csv, InferResult};
use crate::rng::derive_seed;

#[derive(Debug, Parser)]
#[command(name = "tarpro", version, about = "Label-preserving target projection toolkit")]
pub struct Cli {
    /// Config file (`key = value` lines) or a run manifest.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset CSV.
    #[arg(long, default_value = "data.csv")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "pipeline.ckpt")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArg,
    /// Domain ids to use; defaults to the configured targets.
    #[arg(long, value_delimiter = ',')]
    pub domains: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Output directory; defaults to `<work_dir>/<command>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the rotated two-moons benchmark.
    GenData {
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Train the feature extractor on the source domains.
    TrainMetric {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "metric.ckpt")]
        out: PathBuf,
    },
    /// Train the Deep All baseline on the source domains.
    TrainDeepall {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "deepall.ckpt")]
        out: PathBuf,
    },
    /// Fit a VAE on source features.
    TrainVae {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "metric.ckpt")]
        extractor: PathBuf,
        #[arg(long, default_value = "vae.ckpt")]
        out: PathBuf,
    },
    /// Fit a GAN on source features.
    TrainGan {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "metric.ckpt")]
        extractor: PathBuf,
        #[arg(long, default_value = "gan.ckpt")]
        out: PathBuf,
    },
    /// Train the classifier and assemble a pipeline checkpoint.
    TrainClassifier {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "metric.ckpt")]
        extractor: PathBuf,
        /// Sampler checkpoint, `knn`, or `none`.
        #[arg(long, default_value = "none")]
        sampler: String,
        #[arg(long, default_value = "pipeline.ckpt")]
        out: PathBuf,
    },
    /// Write extractor features as a dataset CSV.
    Embed {
        #[arg(long, default_value = "metric.ckpt")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "features.csv")]
        out: PathBuf,
    },
    /// Project targets and write the per-target summary.
    Project {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "projection.csv")]
        out: PathBuf,
        /// Also write one loss trace CSV per target here.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Predict labels for targets.
    Infer {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "predictions.csv")]
        out: PathBuf,
    },
    /// Accuracy per target domain of a pipeline or Deep All checkpoint.
    Evaluate {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "evaluation.csv")]
        out: PathBuf,
    },
    /// Pairwise A-distance between domains, on raw inputs or extractor features.
    Adist {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "adist.csv")]
        out: PathBuf,
    },
    /// Intra/inter-class cosine statistics of extractor features.
    ClusterStats {
        #[arg(long, default_value = "metric.ckpt")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "cluster_stats.csv")]
        out: PathBuf,
    },
    /// Per-batch generalization bound terms on projected targets.
    BoundTerms {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value = "bound_terms.csv")]
        out: PathBuf,
    },
    /// All four pipeline variants.
    Ablate(ExperimentArgs),
    /// VAE, GAN and 1-NN samplers.
    SamplerCompare(ExperimentArgs),
    /// Source-data fractions (`sweep.fractions`).
    FractionSweep(ExperimentArgs),
    /// One source domain at a time.
    SingleSource(ExperimentArgs),
    /// Projection step sizes (`sweep.betas`).
    BetaSweep(ExperimentArgs),
    /// Offsets from the elbow stop (`sweep.epsilons`).
    EpsilonSweep(ExperimentArgs),
    /// Few-shot fine-tuning (`fewshot.sizes`).
    Fewshot(ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainMetric { .. } => "train-metric",
            Command::TrainDeepall { .. } => "train-deepall",
            Command::TrainVae { .. } => "train-vae",
            Command::TrainGan { .. } => "train-gan",
            Command::TrainClassifier { .. } => "train-classifier",
            Command::Embed { .. } => "embed",
            Command::Project { .. } => "project",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Adist { .. } => "adist",
            Command::ClusterStats { .. } => "cluster-stats",
            Command::BoundTerms { .. } => "bound-terms",
            Command::Ablate(_) => "ablate",
            Command::SamplerCompare(_) => "sampler-compare",
            Command::FractionSweep(_) => "fraction-sweep",
            Command::SingleSource(_) => "single-source",
            Command::BetaSweep(_) => "beta-sweep",
            Command::EpsilonSweep(_) => "epsilon-sweep",
            Command::Fewshot(_) => "fewshot",
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Inputs read and outputs written by one command, for the manifest.
struct Ctx {
    run: RunConfig,
    work_dir: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    seeds: Vec<u64>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work_dir.join(p)
        }
    }

    fn note_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn dataset(&mut self, arg: &DataArg) -> Result<Dataset> {
        let path = self.path(&arg.data);
        if !path.exists() {
            return Err(Error::InvalidInput(format!("dataset not found: {}", path.display())));
        }
        let d = load_csv(&path)?;
        self.note_input(&path)?;
        Ok(d)
    }

    fn checkpoint_input(&mut self, p: &Path) -> Result<PathBuf> {
        let path = self.path(p);
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path));
        }
        self.note_input(&path)?;
        Ok(path)
    }

    /// Resolve an output path and refuse to overwrite anything this command reads.
    fn output(&self, p: &Path) -> Result<PathBuf> {
        let path = self.path(p);
        if self.inputs.contains_key(&path.display().to_string()) {
            return Err(Error::InvalidInput(format!("output {} would overwrite an input", path.display())));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(path)
    }

    fn write(&mut self, p: &Path, text: &str) -> Result<PathBuf> {
        let path = self.output(p)?;
        std::fs::write(&path, text)?;
        self.record(&path)?;
        Ok(path)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn manifest(&self) -> serde_json::Value {
        let config = self.run.to_text();
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(config.as_bytes());
        for s in &self.seeds {
            h.update(s.to_le_bytes());
        }
        serde_json::json!({
            "tool": "tarpro",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": config,
            "seeds": self.seeds,
            "manifest_hash": hex::encode(h.finalize()),
            "inputs": self.inputs,
            "outputs": self.outputs,
        })
    }

    fn finish(&self, manifest_path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
        std::fs::write(manifest_path, text + "\n")?;
        Ok(())
    }

    fn target_domains(&self, eval: &EvalArgs) -> Vec<usize> {
        if eval.domains.is_empty() {
            self.run.data.targets.clone()
        } else {
            eval.domains.clone()
        }
    }

    fn sources(&self, data: &Dataset) -> Result<Dataset> {
        let s = data.filter_domains(&self.run.data.sources);
        if s.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no examples from source domains {:?}",
                self.run.data.sources
            )));
        }
        Ok(s)
    }
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Read a config file, or the config snapshot inside a manifest.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("config not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("manifest {}: {e}", path.display())))?;
        let cfg = v
            .get("config")
            .and_then(|c| c.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("manifest {} has no config", path.display())))?;
        return parse_config(cfg);
    }
    parse_config(&text)
}

fn loss_csv(h: &LossHistory) -> String {
    h.to_csv()
}

fn accuracy_csv(acc: &[f64]) -> String {
    let mut s = String::from("epoch,accuracy\n");
    for (i, a) in acc.iter().enumerate() {
        let _ = writeln!(s, "{i},{a}");
    }
    s
}

fn bank_to_dataset(bank: &FeatureBank, names: &[String]) -> Result<Dataset> {
    let examples = (0..bank.features.rows())
        .map(|i| LabeledExample {
            x: bank.features.row(i).to_vec(),
            y: bank.labels[i],
            d: bank.domains[i],
        })
        .collect();
    let d = Dataset {
        examples,
        dim: bank.features.cols(),
        num_classes: bank.num_classes,
        domain_names: names.to_vec(),
    };
    d.validate()?;
    Ok(d)
}

/// Labels for targets: projected when the pipeline has a sampler, direct otherwise.
fn run_inference(pipeline: &Pipeline, targets: &Dataset, threads: Option<usize>) -> Result<(Vec<usize>, Vec<InferResult>)> {
    match pipeline.sampler {
        Some(_) => {
            let res = infer_all(targets, pipeline, &pipeline.config.projection, threads)?;
            Ok((res.iter().map(|r| r.label).collect(), res))
        }
        None => {
            let bank = pipeline.embed(targets)?;
            Ok((predict(&pipeline.classifier, &bank.features)?, Vec::new()))
        }
    }
}

fn targets_of(data: &Dataset, domains: &[usize]) -> Result<Dataset> {
    if let Some(&d) = domains.iter().find(|&&d| d >= data.num_domains()) {
        return Err(Error::InvalidInput(format!("domain {d} not in dataset ({} domains)", data.num_domains())));
    }
    let t = data.filter_domains(domains);
    if t.is_empty() {
        return Err(Error::InvalidInput(format!("no examples in domains {domains:?}")));
    }
    Ok(t)
}

fn experiment_out(ctx: &Ctx, args: &ExperimentArgs) -> PathBuf {
    args.out_dir.clone().unwrap_or_else(|| PathBuf::from(ctx.command))
}

fn write_table(ctx: &mut Ctx, dir: &Path, table: &ResultTable) -> Result<PathBuf> {
    ctx.write(&dir.join("results.csv"), &table.to_csv())?;
    ctx.write(&dir.join("aggregate.csv"), &table.aggregate_csv())?;
    for a in table.aggregate() {
        println!("{} {} {} mean={:.4} sd={:.4} n={}", a.target, a.variant, a.sampler, a.mean, a.sd, a.n);
    }
    Ok(ctx.path(dir).join("manifest.json"))
}

fn run_command(cli: &Cli, ctx: &mut Ctx) -> Result<PathBuf> {
    let seed = ctx.run.seed;
    let cfg = ctx.run.pipeline_for(seed);
    let threads = ctx.run.threads();
    match &cli.command {
        Command::GenData { out } => {
            let data = ctx.run.data.generate(seed)?;
            let path = ctx.output(out)?;
            save_csv(&data, &path)?;
            ctx.record(&path)?;
            println!("wrote {} examples to {}", data.len(), path.display());
            Ok(manifest_path_for(&path))
        }
        Command::TrainMetric { data, out } => {
            let all = ctx.dataset(data)?;
            let sources = ctx.sources(&all)?;
            let (metric, hist) = crate::metric::train_metric(&sources, &cfg.metric)?;
            let path = ctx.output(out)?;
            save_metric(&metric, &cfg, &path)?;
            ctx.record(&path)?;
            ctx.write(&out.with_extension("loss.csv"), &loss_csv(&hist))?;
            println!("final loss {}", hist.last().unwrap_or(f64::NAN));
            Ok(manifest_path_for(&path))
        }
        Command::TrainDeepall { data, out } => {
            let all = ctx.dataset(data)?;
            let sources = ctx.sources(&all)?;
            let (b, acc) = DeepAllBaseline::train(&sources, &cfg)?;
            let path = ctx.output(out)?;
            save_deepall(&b, &cfg, &path)?;
            ctx.record(&path)?;
            ctx.write(&out.with_extension("accuracy.csv"), &accuracy_csv(&acc))?;
            println!("source accuracy {}", b.accuracy(&sources)?);
            Ok(manifest_path_for(&path))
        }
        Command::TrainVae { data, extractor, out } | Command::TrainGan { data, extractor, out } => {
            let kind = if matches!(cli.command, Command::TrainVae { .. }) {
                SamplerKind::Vae
            } else {
                SamplerKind::Gan
            };
            let all = ctx.dataset(data)?;
            let sources = ctx.sources(&all)?;
            let (metric, _) = load_extractor(&ctx.checkpoint_input(extractor)?)?;
            let bank = embed_with(&metric.net, &sources, cfg.normalize)?;
            let (sampler, hist) = fit_sampler(kind, &bank, &cfg)?;
            let path = ctx.output(out)?;
            save_sampler(&sampler, &cfg, &path)?;
            ctx.record(&path)?;
            ctx.write(&out.with_extension("loss.csv"), &loss_csv(&hist))?;
            println!("final loss {}", hist.last().unwrap_or(f64::NAN));
            Ok(manifest_path_for(&path))
        }
        Command::TrainClassifier { data, extractor, sampler, out } => {
            let all = ctx.dataset(data)?;
            let sources = ctx.sources(&all)?;
            let (metric, _) = load_extractor(&ctx.checkpoint_input(extractor)?)?;
            let bank = embed_with(&metric.net, &sources, cfg.normalize)?;
            let sampler = match sampler.as_str() {
                "none" => None,
                "knn" => Some(Sampler::Knn(KnnSampler::new(bank.clone())?)),
                p => {
                    let s = load_sampler(&ctx.checkpoint_input(Path::new(p))?)?;
                    if let Some(d) = s.decoder() {
                        if d.output_dim() != metric.feature_dim {
                            return Err(Error::Shape(format!(
                                "sampler emits {} features, extractor {}",
                                d.output_dim(),
                                metric.feature_dim
                            )));
                        }
                    }
                    Some(s)
                }
            };
            let (classifier, acc) = train_classifier(&bank, &cfg.classifier)?;
            let mut config = cfg.clone();
            if let Some(s) = &sampler {
                config.sampler = s.kind();
            }
            let pipeline = Pipeline {
                metric,
                sampler,
                classifier,
                normalize: cfg.normalize,
                config,
            };
            let path = ctx.output(out)?;
            save_pipeline(&pipeline, &path)?;
            ctx.record(&path)?;
            ctx.write(&out.with_extension("accuracy.csv"), &accuracy_csv(&acc))?;
            println!("source accuracy {}", acc.last().copied().unwrap_or(f64::NAN));
            Ok(manifest_path_for(&path))
        }
        Command::Embed { checkpoint, data, out } => {
            let data = ctx.dataset(data)?;
            let (metric, _) = load_extractor(&ctx.checkpoint_input(checkpoint)?)?;
            let bank = embed_with(&metric.net, &data, cfg.normalize)?;
            let path = ctx.output(out)?;
            save_csv(&bank_to_dataset(&bank, &data.domain_names)?, &path)?;
            ctx.record(&path)?;
            Ok(manifest_path_for(&path))
        }
        Command::Project { eval, out, traces } => {
            let (pipeline, targets) = load_eval(ctx, eval)?;
            if pipeline.sampler.is_none() {
                return Err(Error::InvalidInput("projection needs a pipeline with a sampler".into()));
            }
            let before = pipeline.fingerprint();
            let (_, res) = run_inference(&pipeline, &targets, threads)?;
            check_unchanged(before, &pipeline)?;
            let path = ctx.write(out, &summary_csv(&res, &targets.labels()))?;
            if let Some(dir) = traces {
                for r in &res {
                    if let Some(t) = &r.trace {
                        ctx.write(&dir.join(format!("trace_{:05}.csv", r.index)), &t.to_csv())?;
                    }
                }
            }
            println!("accuracy {}", accuracy(&res.iter().map(|r| r.label).collect::<Vec<_>>(), &targets.labels()));
            Ok(manifest_path_for(&path))
        }
        Command::Infer { eval, out } => {
            let (pipeline, targets) = load_eval(ctx, eval)?;
            let before = pipeline.fingerprint();
            let (pred, _) = run_inference(&pipeline, &targets, threads)?;
            check_unchanged(before, &pipeline)?;
            let mut s = String::from("index,domain,pred,true\n");
            for (i, (e, p)) in targets.examples.iter().zip(&pred).enumerate() {
                let _ = writeln!(s, "{i},{},{p},{}", e.d, e.y);
            }
            let path = ctx.write(out, &s)?;
            println!("accuracy {}", accuracy(&pred, &targets.labels()));
            Ok(manifest_path_for(&path))
        }
        Command::Evaluate { eval, out } => {
            let ck_path = ctx.checkpoint_input(&eval.checkpoint)?;
            let data = ctx.dataset(&eval.data)?;
            let kind = Checkpoint::load(&ck_path)?.kind;
            let mut rows = Vec::new();
            for d in ctx.target_domains(eval) {
                let t = targets_of(&data, &[d])?;
                let acc = if kind == "deepall" {
                    load_deepall(&ck_path)?.0.accuracy(&t)?
                } else {
                    let p = load_pipeline(&ck_path)?;
                    accuracy(&run_inference(&p, &t, threads)?.0, &t.labels())
                };
                println!("{} accuracy {acc}", data.domain_names[d]);
                rows.push(ReportRow::new("accuracy", data.domain_names[d].clone(), acc));
            }
            let path = ctx.write(out, &report_csv(&rows))?;
            Ok(manifest_path_for(&path))
        }
        Command::Adist { data, checkpoint, out } => {
            let data = ctx.dataset(data)?;
            let (features, scope) = match checkpoint {
                Some(c) => {
                    let (metric, _) = load_extractor(&ctx.checkpoint_input(c)?)?;
                    (embed_with(&metric.net, &data, cfg.normalize)?, "features")
                }
                None => (raw_bank(&data)?, "raw"),
            };
            let mut rows = Vec::new();
            let n = data.num_domains();
            for a in 0..n {
                for b in a + 1..n {
                    let fa = domain_rows(&features, a)?;
                    let fb = domain_rows(&features, b)?;
                    if fa.rows() == 0 || fb.rows() == 0 {
                        continue;
                    }
                    let mut ac = ctx.run.adist.clone();
                    ac.seed = derive_seed(seed, (a * n + b) as u64);
                    let r = a_distance(&fa, &fb, &ac)?;
                    let pair = format!("{}:{}", data.domain_names[a], data.domain_names[b]);
                    println!("{scope} {pair} {}", r.a_distance);
                    rows.push(ReportRow::new(format!("a_distance_{scope}"), pair, r.a_distance));
                }
            }
            let path = ctx.write(out, &report_csv(&rows))?;
            Ok(manifest_path_for(&path))
        }
        Command::ClusterStats { checkpoint, data, out } => {
            let data = ctx.dataset(data)?;
            let (metric, _) = load_extractor(&ctx.checkpoint_input(checkpoint)?)?;
            let bank = embed_with(&metric.net, &ctx.sources(&data)?, cfg.normalize)?;
            let st = cluster_stats(&bank)?;
            let mut rows = vec![
                ReportRow::new("intra_mean", "sources", st.intra_mean),
                ReportRow::new("inter_mean", "sources", st.inter_mean),
                ReportRow::new("margin", "sources", st.margin),
            ];
            let src = &ctx.run.data.sources;
            for (i, &a) in src.iter().enumerate() {
                for &b in &src[i + 1..] {
                    let c = cross_domain_cluster_stats(&bank, a, b)?;
                    rows.push(ReportRow::new(
                        "cross_margin",
                        format!("{}:{}", data.domain_names[a], data.domain_names[b]),
                        c.margin,
                    ));
                }
            }
            println!("margin {}", st.margin);
            let path = ctx.write(out, &report_csv(&rows))?;
            Ok(manifest_path_for(&path))
        }
        Command::BoundTerms { eval, batch_size, out } => {
            let (pipeline, targets) = load_eval(ctx, eval)?;
            if pipeline.sampler.is_none() {
                return Err(Error::InvalidInput("bound terms need a pipeline with a sampler".into()));
            }
            let data = load_csv(&ctx.path(&eval.data.data))?;
            let bank = pipeline.embed(&ctx.sources(&data)?)?;
            let (_, res) = run_inference(&pipeline, &targets, threads)?;
            let reports = bound_terms(&res, &targets.labels(), &bank, *batch_size)?;
            let mut s = String::from("batch,count,lhs,term_i,term_ii,holds\n");
            for (i, r) in reports.iter().enumerate() {
                let _ = writeln!(s, "{i},{},{},{},{},{}", r.count, r.lhs, r.term_i, r.term_ii, r.holds());
            }
            let held = reports.iter().filter(|r| r.holds()).count();
            println!("bound holds on {held}/{} batches", reports.len());
            let path = ctx.write(out, &s)?;
            Ok(manifest_path_for(&path))
        }
        Command::Ablate(a)
        | Command::SamplerCompare(a)
        | Command::FractionSweep(a)
        | Command::SingleSource(a)
        | Command::BetaSweep(a)
        | Command::EpsilonSweep(a)
        | Command::Fewshot(a) => {
            let mut plan = ctx.run.plan(ctx.command);
            let table = match &cli.command {
                Command::Ablate(_) => run_ablation(&plan)?,
                Command::SamplerCompare(_) => {
                    plan.samplers = vec![SamplerKind::Vae, SamplerKind::Gan, SamplerKind::Knn];
                    run_sampler_comparison(&plan)?
                }
                Command::FractionSweep(_) => run_fraction_sweep(&plan, &ctx.run.fractions)?,
                Command::SingleSource(_) => run_single_source(&plan)?,
                Command::BetaSweep(_) => run_beta_sweep(&plan, &ctx.run.betas)?,
                Command::EpsilonSweep(_) => run_epsilon_sweep(&plan, &ctx.run.epsilons, ctx.run.epsilon_mode)?,
                _ => run_fewshot(&plan, &ctx.run.fewshot_sizes)?,
            };
            let dir = experiment_out(ctx, a);
            write_table(ctx, &dir, &table)
        }
    }
}

fn raw_bank(data: &Dataset) -> Result<FeatureBank> {
    Ok(FeatureBank {
        features: data.inputs(),
        labels: data.labels(),
        domains: data.domains(),
        num_classes: data.num_classes,
    })
}

fn domain_rows(bank: &FeatureBank, d: usize) -> Result<Tensor2> {
    let rows: Vec<&[f64]> = (0..bank.features.rows())
        .filter(|&i| bank.domains[i] == d)
        .map(|i| bank.features.row(i))
        .collect();
    if rows.is_empty() {
        return Ok(Tensor2::zeros(0, bank.features.cols()));
    }
    Tensor2::from_rows(&rows)
}

fn load_eval(ctx: &mut Ctx, eval: &EvalArgs) -> Result<(Pipeline, Dataset)> {
    let path = ctx.checkpoint_input(&eval.checkpoint)?;
    let pipeline = load_pipeline(&path)?;
    let data = ctx.dataset(&eval.data)?;
    if data.dim != pipeline.metric.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} inputs, checkpoint expects {}",
            data.dim,
            pipeline.metric.input_dim()
        )));
    }
    let targets = targets_of(&data, &ctx.target_domains(eval))?;
    Ok((pipeline, targets))
}

fn check_unchanged(before: u64, pipeline: &Pipeline) -> Result<()> {
    if pipeline.fingerprint() != before {
        return Err(Error::Numeric("model parameters changed during inference".into()));
    }
    Ok(())
}

/// Parse arguments and run; returns the process exit code. Errors go to
/// stderr as one `error[kind]: message` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut run = match &cli.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    run.apply_overrides(&cli.set)?;
    let experiment = matches!(
        cli.command,
        Command::Ablate(_)
            | Command::SamplerCompare(_)
            | Command::FractionSweep(_)
            | Command::SingleSource(_)
            | Command::BetaSweep(_)
            | Command::EpsilonSweep(_)
            | Command::Fewshot(_)
    );
    let seeds = if experiment { run.seeds.clone() } else { vec![run.seed] };
    let work_dir = PathBuf::from(&run.work_dir);
    std::fs::create_dir_all(&work_dir)?;
    let mut ctx = Ctx {
        run,
        work_dir,
        command: cli.command.name(),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        seeds,
    };
    log::info!("{} in {}", ctx.command, ctx.work_dir.display());
    let manifest = run_command(cli, &mut ctx)?;
    ctx.finish(&manifest)
}
