//! Flat `key = value` run configuration.
//!
//! `#` starts a comment. Unknown keys, values that do not parse and keys
//! given twice are rejected with the offending line number. Absent keys keep
//! their defaults. `to_text` writes every key in canonical form and parses
//! back to an identical config.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::classifier::FewShotConfig;
use crate::diagnostics::AdistConfig;
use crate::error::{Error, Result};
use crate::experiments::{BenchmarkSpec, ExperimentPlan, Variant};
use crate::generative::SamplerKind;
use crate::pipeline::PipelineConfig;
use crate::projection::EpsilonMode;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seed of single-run commands.
    pub seed: u64,
    /// Seeds of experiment commands.
    pub seeds: Vec<u64>,
    /// Worker threads for projection; 0 defers to `TARPRO_THREADS` or all cores.
    pub threads: usize,
    pub data: BenchmarkSpec,
    pub pipeline: PipelineConfig,
    pub variant: Variant,
    pub fewshot: FewShotConfig,
    pub fewshot_sizes: Vec<usize>,
    pub adist: AdistConfig,
    pub fractions: Vec<f64>,
    pub betas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub epsilon_mode: EpsilonMode,
    pub work_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            seeds: (0..5).collect(),
            threads: 0,
            data: BenchmarkSpec::default(),
            pipeline: PipelineConfig::default(),
            variant: Variant::Full,
            fewshot: FewShotConfig::default(),
            fewshot_sizes: vec![0, 7, 10],
            adist: AdistConfig::default(),
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            betas: vec![0.05, 0.01, 0.005],
            epsilons: vec![-200.0, -100.0, -50.0, -25.0, 0.0, 25.0, 50.0, 100.0, 200.0],
            epsilon_mode: EpsilonMode::Absolute,
            work_dir: "runs".to_string(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty => $what:literal),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|_| format!("expected {}, got {s:?}", $what))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(usize => "a non-negative integer", u64 => "a non-negative integer", bool => "true or false");

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got {s:?}")),
        }
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            Err("expected a nonempty string".into())
        } else {
            Ok(s.to_string())
        }
    }
    fn format_value(&self) -> String {
        self.clone()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn format_value(&self) -> String {
        self.iter().map(T::format_value).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for SamplerKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        SamplerKind::from_str(s).map_err(|e| e.to_string())
    }
    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for Variant {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Variant::from_str(s).map_err(|e| e.to_string())
    }
    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for EpsilonMode {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "absolute" => Ok(EpsilonMode::Absolute),
            "fraction" => Ok(EpsilonMode::FractionOfNStar),
            _ => Err(format!("expected absolute or fraction, got {s:?}")),
        }
    }
    fn format_value(&self) -> String {
        match self {
            EpsilonMode::Absolute => "absolute",
            EpsilonMode::FractionOfNStar => "fraction",
        }
        .to_string()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every accepted key, in canonical order.
        pub const KEYS: &[&str] = &["latent_dim", $($key),*];

        fn set_field(c: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
            match key {
                "latent_dim" => {
                    let d = usize::parse_value(v)?;
                    c.pipeline.vae.latent_dim = d;
                    c.pipeline.gan.latent_dim = d;
                }
                $($key => c.$($field).+ = ConfigValue::parse_value(v)?,)*
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        }

        fn get_field(c: &RunConfig, key: &str) -> Option<String> {
            match key {
                "latent_dim" => Some(c.pipeline.vae.latent_dim.format_value()),
                $($key => Some(c.$($field).+.format_value()),)*
                _ => None,
            }
        }
    };
}

config_keys! {
    "seed" => seed,
    "seeds" => seeds,
    "threads" => threads,
    "work_dir" => work_dir,
    "data.angles" => data.angles,
    "data.sources" => data.sources,
    "data.targets" => data.targets,
    "data.n_per_domain" => data.n_per_domain,
    "data.noise_sd" => data.noise_sd,
    "tau" => pipeline.metric.tau,
    "metric.hidden" => pipeline.metric.hidden,
    "metric.feature_dim" => pipeline.metric.feature_dim,
    "metric.lr" => pipeline.metric.lr,
    "metric.momentum" => pipeline.metric.momentum,
    "metric.epochs" => pipeline.metric.epochs,
    "metric.batch_size" => pipeline.metric.batch_size,
    "vae.hidden" => pipeline.vae.hidden,
    "vae.lr" => pipeline.vae.lr,
    "vae.momentum" => pipeline.vae.momentum,
    "vae.epochs" => pipeline.vae.epochs,
    "vae.batch_size" => pipeline.vae.batch_size,
    "vae.kl_weight" => pipeline.vae.kl_weight,
    "gan.hidden" => pipeline.gan.hidden,
    "gan.lr" => pipeline.gan.lr,
    "gan.epochs" => pipeline.gan.epochs,
    "gan.batch_size" => pipeline.gan.batch_size,
    "classifier.hidden" => pipeline.classifier.hidden,
    "classifier.lr" => pipeline.classifier.lr,
    "classifier.epochs" => pipeline.classifier.epochs,
    "classifier.batch_size" => pipeline.classifier.batch_size,
    "beta" => pipeline.projection.beta,
    "max_iters" => pipeline.projection.max_iters,
    "window" => pipeline.projection.window,
    "restarts" => pipeline.projection.restarts,
    "history_stride" => pipeline.projection.history_stride,
    "sampler" => pipeline.sampler,
    "normalize" => pipeline.normalize,
    "variant" => variant,
    "fewshot.epochs" => fewshot.epochs,
    "fewshot.lr_scale" => fewshot.lr_scale,
    "fewshot.source_batch" => fewshot.source_batch,
    "fewshot.sizes" => fewshot_sizes,
    "adist.hidden" => adist.hidden,
    "adist.epochs" => adist.epochs,
    "adist.batch_size" => adist.batch_size,
    "adist.lr" => adist.lr,
    "sweep.fractions" => fractions,
    "sweep.betas" => betas,
    "sweep.epsilons" => epsilons,
    "sweep.epsilon_mode" => epsilon_mode,
}

/// Short names accepted for a few keys.
fn canonical(key: &str) -> &str {
    match key {
        "M" => "max_iters",
        "W" => "window",
        k => k,
    }
}

impl RunConfig {
    /// Set one key. `line` is used in error messages (0 for command-line overrides).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let key = canonical(key.trim());
        set_field(self, key, value.trim()).map_err(|msg| Error::Config {
            line,
            msg: format!("{key}: {msg}"),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_field(self, canonical(key))
    }

    /// Apply `key=value` overrides in order; later ones win.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                line: 0,
                msg: format!("override {o:?} is not key=value"),
            })?;
            self.set(k, v, 0)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        if !(self.pipeline.metric.tau > 0.0) {
            return bad("tau must be > 0".into());
        }
        if self.pipeline.metric.feature_dim == 0 || self.pipeline.vae.latent_dim == 0 {
            return bad("feature_dim and latent_dim must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.data.noise_sd >= 0.0) {
            return bad("data.noise_sd must be >= 0".into());
        }
        self.data.validate()?;
        self.pipeline.projection.validate()
    }

    /// Every key in canonical order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", get_field(self, k).expect("listed key"));
        }
        s
    }

    /// Pipeline config for one seed.
    pub fn pipeline_for(&self, seed: u64) -> PipelineConfig {
        self.pipeline.with_seed(seed)
    }

    pub fn threads(&self) -> Option<usize> {
        (self.threads > 0).then_some(self.threads)
    }

    pub fn plan(&self, name: &str) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(name);
        p.data = self.data.clone();
        p.seeds = self.seeds.clone();
        p.pipeline = self.pipeline.clone();
        p.samplers = vec![self.pipeline.sampler];
        p.fewshot = self.fewshot.clone();
        p.threads = self.threads();
        p
    }
}

/// Parse config text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key = value, got {body:?}"),
        })?;
        let key = canonical(k.trim()).to_string();
        if let Some((_, first)) = seen.iter().find(|(s, _)| *s == key) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
        cfg.set(&key, v, line)?;
        seen.push((key, line));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.pipeline.metric.tau, 0.1);
        assert_eq!(c.pipeline.projection.beta, 0.01);
        assert_eq!(c.pipeline.projection.max_iters, 2000);
        assert_eq!(c.pipeline.projection.window, 25);
    }

    #[test]
    fn overrides_and_comments() {
        let c = parse_config("# header\ntau = 0.2  # trailing\n\nM = 300\nW=7\nsampler = knn\nseeds = 3, 4\n").unwrap();
        assert_eq!(c.pipeline.metric.tau, 0.2);
        assert_eq!(c.pipeline.projection.max_iters, 300);
        assert_eq!(c.pipeline.projection.window, 7);
        assert_eq!(c.pipeline.sampler, SamplerKind::Knn);
        assert_eq!(c.seeds, vec![3, 4]);
    }

    #[test]
    fn type_error_names_line() {
        let e = parse_config("tau = abc").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        assert!(e.to_string().contains("line 1"), "{e}");
        let e = parse_config("\n\nbeta = fast").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(parse_config("tau = 0.1\ncolour = red").unwrap_err(), Error::Config { line: 2, .. }));
        let e = parse_config("W = 5\nwindow = 7").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        assert!(e.to_string().contains("duplicate"));
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_config("W = 4").is_err());
        assert!(parse_config("beta = -1").is_err());
        assert!(parse_config("data.targets = 9").is_err());
        assert!(parse_config("tau = inf").is_err());
    }

    #[test]
    fn latent_dim_sets_both_samplers() {
        let c = parse_config("latent_dim = 3").unwrap();
        assert_eq!((c.pipeline.vae.latent_dim, c.pipeline.gan.latent_dim), (3, 3));
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["beta=0.05".into(), "sweep.epsilon_mode=fraction".into(), "metric.hidden=8,4".into()])
            .unwrap();
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn bad_override_is_an_error() {
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(&["tau".into()]).is_err());
        assert!(c.apply_overrides(&["tau=x".into()]).is_err());
    }
}
