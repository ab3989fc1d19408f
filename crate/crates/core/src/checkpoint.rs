//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TARPROCK"
//! version  u32
//! kind     u32 length + utf-8
//! config   u32 length + utf-8 (canonical `key = value` text)
//! blocks   u32 count, then per block:
//!          u32 name length + utf-8 name, u64 rows, u64 cols, rows*cols f64
//! ```
//!
//! Every value is stored by its bit pattern, so a save/load round trip is
//! exact.

use std::path::Path;

use crate::classifier::ClassifierModel;
use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::generative::{GanModel, KnnSampler, Sampler, VaeModel};
use crate::metric::{FeatureBank, MetricModel};
use crate::numerics::{Activation, Layer, MlpParams, Tensor2};
use crate::pipeline::{DeepAllBaseline, Pipeline, PipelineConfig};

pub const MAGIC: &[u8; 8] = b"TARPROCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: String,
    pub blocks: Vec<(String, Tensor2)>,
}

fn ck_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return ck_err(format!("truncated while reading {what} at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).or_else(|_| ck_err(format!("{what} is not utf-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(kind: &str, config: String) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor2) {
        self.blocks.push((name.into(), t));
    }

    fn push_scalar(&mut self, name: &str, v: f64) {
        self.push(name, Tensor2::from_vec(1, 1, vec![v]).expect("1x1"));
    }

    /// u64 values are stored by bit pattern inside an f64 slot.
    fn push_u64s(&mut self, name: &str, v: &[u64]) {
        let data = v.iter().map(|&x| f64::from_bits(x)).collect();
        self.push(name, Tensor2::from_vec(1, v.len(), data).expect("row"));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing block '{name}'")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.data().len() != 1 {
            return ck_err(format!("block '{name}' should hold one value"));
        }
        Ok(t.data()[0])
    }

    fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e12 {
            return ck_err(format!("block '{name}' is not a count: {v}"));
        }
        Ok(v as usize)
    }

    fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        Ok(self.get(name)?.data().iter().map(|v| v.to_bits()).collect())
    }

    fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return ck_err(format!("expected a '{kind}' checkpoint, found '{}'", self.kind));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return ck_err("bad magic");
        }
        r.pos = MAGIC.len();
        let version = r.u32("version")?;
        if version != VERSION {
            return ck_err(format!("unsupported version {version} (expected {VERSION})"));
        }
        let kind = r.string("kind")?;
        let config = r.string("config")?;
        let n = r.u32("block count")?;
        let mut blocks = Vec::new();
        for _ in 0..n {
            let name = r.string("block name")?;
            let rows = r.u64("block rows")?;
            let cols = r.u64("block cols")?;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l <= ((buf.len() - r.pos) / 8) as u64)
                .ok_or_else(|| Error::Checkpoint(format!("block '{name}' dims {rows}x{cols} exceed the file")))?
                as usize;
            let bytes = r.take(len * 8, &name)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push((name, Tensor2::from_vec(rows as usize, cols as usize, data)?));
        }
        if r.pos != buf.len() {
            return ck_err(format!("{} trailing bytes", buf.len() - r.pos));
        }
        Ok(Checkpoint { kind, config, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read(path) {
            Ok(buf) => Self::from_bytes(&buf),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::CheckpointNotFound(path.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        parse_config(&self.config)
    }

    fn push_mlp(&mut self, prefix: &str, net: &MlpParams) {
        self.push_scalar(&format!("{prefix}.layers"), net.layers().len() as f64);
        for (i, l) in net.layers().iter().enumerate() {
            self.push(format!("{prefix}.{i}.weight"), l.weight.clone());
            self.push(format!("{prefix}.{i}.bias"), l.bias.clone());
            let (code, slope) = l.activation.code();
            self.push(format!("{prefix}.{i}.act"), Tensor2::from_vec(1, 2, vec![code as f64, slope]).expect("1x2"));
        }
    }

    fn mlp(&self, prefix: &str) -> Result<MlpParams> {
        let n = self.count(&format!("{prefix}.layers"))?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let weight = self.get(&format!("{prefix}.{i}.weight"))?.clone();
            let bias = self.get(&format!("{prefix}.{i}.bias"))?.clone();
            let act = self.get(&format!("{prefix}.{i}.act"))?;
            if act.data().len() != 2 || !matches!(act.data()[0], 0.0 | 1.0 | 2.0) {
                return ck_err(format!("bad activation block for {prefix}.{i}"));
            }
            let activation = Activation::from_code(act.data()[0] as u8, act.data()[1])
                .map_err(|e| Error::Checkpoint(format!("{prefix}.{i}: {e}")))?;
            layers.push(Layer { weight, bias, activation });
        }
        MlpParams::from_layers(layers).map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
    }

    fn push_ids(&mut self, name: &str, ids: &[usize]) {
        let data = ids.iter().map(|&v| v as f64).collect();
        self.push(name, Tensor2::from_vec(1, ids.len(), data).expect("row"));
    }

    fn ids(&self, name: &str) -> Result<Vec<usize>> {
        self.get(name)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    ck_err(format!("block '{name}' holds non-index {v}"))
                }
            })
            .collect()
    }

    fn push_bank(&mut self, prefix: &str, bank: &FeatureBank) {
        self.push(format!("{prefix}.features"), bank.features.clone());
        self.push_ids(&format!("{prefix}.labels"), &bank.labels);
        self.push_ids(&format!("{prefix}.domains"), &bank.domains);
        self.push_scalar(&format!("{prefix}.num_classes"), bank.num_classes as f64);
    }

    fn bank(&self, prefix: &str) -> Result<FeatureBank> {
        let features = self.get(&format!("{prefix}.features"))?.clone();
        let labels = self.ids(&format!("{prefix}.labels"))?;
        let domains = self.ids(&format!("{prefix}.domains"))?;
        if labels.len() != features.rows() || domains.len() != features.rows() {
            return ck_err(format!("{prefix}: label/domain count does not match {} rows", features.rows()));
        }
        Ok(FeatureBank {
            features,
            labels,
            domains,
            num_classes: self.count(&format!("{prefix}.num_classes"))?,
        })
    }
}

fn snapshot(config: &PipelineConfig) -> String {
    let run = RunConfig {
        seed: config.seed,
        pipeline: config.clone(),
        ..RunConfig::default()
    };
    run.to_text()
}

fn seeds_of(c: &PipelineConfig) -> [u64; 6] {
    [c.seed, c.metric.seed, c.vae.seed, c.gan.seed, c.classifier.seed, c.projection.init_seed]
}

fn restore_config(ck: &Checkpoint) -> Result<PipelineConfig> {
    let mut c = ck.run_config()?.pipeline;
    let s = ck.u64s("seeds")?;
    if s.len() != 6 {
        return ck_err("seeds block should hold 6 values");
    }
    c.seed = s[0];
    c.metric.seed = s[1];
    c.vae.seed = s[2];
    c.gan.seed = s[3];
    c.classifier.seed = s[4];
    c.projection.init_seed = s[5];
    Ok(c)
}

fn base(kind: &str, config: &PipelineConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(kind, snapshot(config));
    ck.push_u64s("seeds", &seeds_of(config));
    ck
}

fn push_metric(ck: &mut Checkpoint, m: &MetricModel) {
    ck.push_mlp("metric", &m.net);
    ck.push_scalar("metric.tau", m.tau);
}

fn read_metric(ck: &Checkpoint) -> Result<MetricModel> {
    MetricModel::from_net(ck.mlp("metric")?, ck.scalar("metric.tau")?)
}

fn push_classifier(ck: &mut Checkpoint, prefix: &str, c: &ClassifierModel) {
    ck.push_mlp(prefix, &c.net);
    ck.push_scalar(&format!("{prefix}.num_classes"), c.num_classes as f64);
}

fn read_classifier(ck: &Checkpoint, prefix: &str) -> Result<ClassifierModel> {
    let net = ck.mlp(prefix)?;
    let num_classes = ck.count(&format!("{prefix}.num_classes"))?;
    if net.output_dim() != num_classes {
        return ck_err(format!("{prefix}: {} outputs for {num_classes} classes", net.output_dim()));
    }
    Ok(ClassifierModel { net, num_classes })
}

fn push_sampler(ck: &mut Checkpoint, s: &Sampler) {
    match s {
        Sampler::Vae(v) => {
            ck.push_scalar("sampler.kind", 0.0);
            ck.push_mlp("vae.encoder", &v.encoder);
            ck.push_mlp("vae.decoder", &v.decoder);
        }
        Sampler::Gan(g) => {
            ck.push_scalar("sampler.kind", 1.0);
            ck.push_mlp("gan.generator", &g.generator);
            ck.push_mlp("gan.discriminator", &g.discriminator);
        }
        Sampler::Knn(k) => {
            ck.push_scalar("sampler.kind", 2.0);
            ck.push_bank("knn", &k.bank);
        }
    }
}

fn read_sampler(ck: &Checkpoint) -> Result<Sampler> {
    Ok(match ck.count("sampler.kind")? {
        0 => {
            let encoder = ck.mlp("vae.encoder")?;
            let decoder = ck.mlp("vae.decoder")?;
            let latent_dim = decoder.input_dim();
            if encoder.output_dim() != 2 * latent_dim {
                return ck_err("vae encoder output does not match decoder latent size");
            }
            Sampler::Vae(VaeModel { encoder, decoder, latent_dim })
        }
        1 => {
            let generator = ck.mlp("gan.generator")?;
            let latent_dim = generator.input_dim();
            Sampler::Gan(GanModel {
                generator,
                discriminator: ck.mlp("gan.discriminator")?,
                latent_dim,
            })
        }
        2 => Sampler::Knn(KnnSampler { bank: ck.bank("knn")? }),
        k => return ck_err(format!("unknown sampler code {k}")),
    })
}

pub fn pipeline_checkpoint(p: &Pipeline) -> Checkpoint {
    let mut ck = base("pipeline", &p.config);
    push_metric(&mut ck, &p.metric);
    push_classifier(&mut ck, "classifier", &p.classifier);
    ck.push_scalar("normalize", if p.normalize { 1.0 } else { 0.0 });
    if let Some(s) = &p.sampler {
        push_sampler(&mut ck, s);
    }
    ck
}

pub fn pipeline_from_checkpoint(ck: &Checkpoint) -> Result<Pipeline> {
    ck.expect_kind("pipeline")?;
    let metric = read_metric(ck)?;
    let classifier = read_classifier(ck, "classifier")?;
    if classifier.net.input_dim() != metric.feature_dim {
        return ck_err("classifier input does not match feature size");
    }
    let sampler = if ck.has("sampler.kind") { Some(read_sampler(ck)?) } else { None };
    Ok(Pipeline {
        metric,
        sampler,
        classifier,
        normalize: ck.scalar("normalize")? != 0.0,
        config: restore_config(ck)?,
    })
}

pub fn save_pipeline(p: &Pipeline, path: &Path) -> Result<()> {
    pipeline_checkpoint(p).save(path)
}

pub fn load_pipeline(path: &Path) -> Result<Pipeline> {
    pipeline_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn save_deepall(b: &DeepAllBaseline, config: &PipelineConfig, path: &Path) -> Result<()> {
    let mut ck = base("deepall", config);
    push_metric(&mut ck, &b.backbone);
    push_classifier(&mut ck, "head", &b.head);
    ck.save(path)
}

pub fn load_deepall(path: &Path) -> Result<(DeepAllBaseline, PipelineConfig)> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind("deepall")?;
    let b = DeepAllBaseline {
        backbone: read_metric(&ck)?,
        head: read_classifier(&ck, "head")?,
    };
    Ok((b, restore_config(&ck)?))
}

pub fn save_metric(m: &MetricModel, config: &PipelineConfig, path: &Path) -> Result<()> {
    let mut ck = base("metric", config);
    push_metric(&mut ck, m);
    ck.save(path)
}

/// Feature extractor of a metric, deepall or pipeline checkpoint, with the
/// config it was trained under.
pub fn load_extractor(path: &Path) -> Result<(MetricModel, PipelineConfig)> {
    let ck = Checkpoint::load(path)?;
    match ck.kind.as_str() {
        "metric" | "deepall" | "pipeline" => Ok((read_metric(&ck)?, restore_config(&ck)?)),
        k => ck_err(format!("'{k}' checkpoint has no feature extractor")),
    }
}

pub fn save_sampler(s: &Sampler, config: &PipelineConfig, path: &Path) -> Result<()> {
    let mut ck = base("sampler", config);
    push_sampler(&mut ck, s);
    ck.save(path)
}

pub fn load_sampler(path: &Path) -> Result<Sampler> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind("sampler")?;
    read_sampler(&ck)
}
