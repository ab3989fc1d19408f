//! Samplers of the source-feature manifold.
//!
//! A VAE decoder (default) or a GAN generator serves as the map from a
//! standard-normal latent space onto the feature manifold; the 1-NN sampler
//! returns stored bank rows directly.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::metric::{cosine_sim, nearest_row, FeatureBank, LossHistory};
use crate::numerics::{Activation, MlpGrads, MlpParams, OptimKind, OptimState, Tensor2};
use crate::rng::{rng_for, stream, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    /// Feature -> `[mu | logvar]`.
    pub encoder: MlpParams,
    /// Latent -> feature.
    pub decoder: MlpParams,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: MlpParams,
    /// Feature -> single real/fake logit.
    pub discriminator: MlpParams,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnSampler {
    pub bank: FeatureBank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 8,
            hidden: vec![32, 32],
            lr: 0.005,
            momentum: 0.9,
            epochs: 150,
            batch_size: 64,
            kl_weight: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 8,
            hidden: vec![32, 32],
            lr: 0.0002,
            epochs: 300,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `mu + exp(logvar / 2) * noise`, elementwise.
pub fn reparameterize(mu: &Tensor2, logvar: &Tensor2, noise: &Tensor2) -> Result<Tensor2> {
    let shape = (mu.rows(), mu.cols());
    if (logvar.rows(), logvar.cols()) != shape || (noise.rows(), noise.cols()) != shape {
        return shape_err("mu, logvar and noise must share a shape");
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise.data())
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect();
    Tensor2::from_vec(shape.0, shape.1, data)
}

fn split_halves(t: &Tensor2, latent: usize) -> (Tensor2, Tensor2) {
    let mut mu = Tensor2::zeros(t.rows(), latent);
    let mut lv = Tensor2::zeros(t.rows(), latent);
    for r in 0..t.rows() {
        mu.row_mut(r).copy_from_slice(&t.row(r)[..latent]);
        lv.row_mut(r).copy_from_slice(&t.row(r)[latent..]);
    }
    (mu, lv)
}

/// Mean over elements of `|e| + e^2` with `e = target - recon`.
pub fn recon_loss(target: &Tensor2, recon: &Tensor2) -> f64 {
    let n = target.data().len().max(1) as f64;
    target
        .data()
        .iter()
        .zip(recon.data())
        .map(|(x, y)| {
            let e = x - y;
            e.abs() + e * e
        })
        .sum::<f64>()
        / n
}

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)), averaged over rows.
pub fn kl_divergence(mu: &Tensor2, logvar: &Tensor2) -> f64 {
    let rows = mu.rows().max(1) as f64;
    0.5 * mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
        / rows
}

impl VaeModel {
    pub fn new(feature_dim: usize, config: &VaeConfig, rng: &mut Rng) -> Result<Self> {
        let mut enc = vec![feature_dim];
        enc.extend(&config.hidden);
        enc.push(2 * config.latent_dim);
        let mut dec = vec![config.latent_dim];
        dec.extend(config.hidden.iter().rev());
        dec.push(feature_dim);
        let model = VaeModel {
            encoder: MlpParams::init(&enc, Activation::leaky(), Activation::Identity, rng)?,
            decoder: MlpParams::init(&dec, Activation::leaky(), Activation::Identity, rng)?,
            latent_dim: config.latent_dim,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoder.input_dim() != self.latent_dim || self.encoder.output_dim() != 2 * self.latent_dim {
            return shape_err("VAE encoder/decoder widths do not match latent_dim");
        }
        if self.encoder.input_dim() != self.decoder.output_dim() {
            return shape_err("VAE encoder input and decoder output widths differ");
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.output_dim()
    }
}

/// VAE loss for a batch of features with explicit reparameterisation noise.
pub fn vae_loss(model: &VaeModel, batch: &Tensor2, noise: &Tensor2, kl_weight: f64) -> Result<VaeLoss> {
    Ok(vae_loss_grad(model, batch, noise, kl_weight)?.0)
}

/// VAE loss together with encoder and decoder gradients.
pub fn vae_loss_grad(
    model: &VaeModel,
    batch: &Tensor2,
    noise: &Tensor2,
    kl_weight: f64,
) -> Result<(VaeLoss, MlpGrads, MlpGrads)> {
    let l = model.latent_dim;
    if noise.rows() != batch.rows() || noise.cols() != l {
        return shape_err(format!(
            "noise is {}x{}, expected {}x{l}",
            noise.rows(),
            noise.cols(),
            batch.rows()
        ));
    }
    let (enc_out, enc_cache) = model.encoder.forward_cached(batch)?;
    let (mu, logvar) = split_halves(&enc_out, l);
    let latent = reparameterize(&mu, &logvar, noise)?;
    let (recon, dec_cache) = model.decoder.forward_cached(&latent)?;

    let recon_term = recon_loss(batch, &recon);
    let kl = kl_divergence(&mu, &logvar);
    let loss = VaeLoss {
        total: recon_term + kl_weight * kl,
        recon: recon_term,
        kl,
    };

    let n_elem = batch.data().len() as f64;
    let rows = batch.rows() as f64;
    let mut d_recon = Tensor2::zeros(recon.rows(), recon.cols());
    for ((d, x), y) in d_recon.data_mut().iter_mut().zip(batch.data()).zip(recon.data()) {
        let e = x - y;
        let sign = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        *d = -(sign + 2.0 * e) / n_elem;
    }
    let (dec_grads, d_latent) = model.decoder.backward_cached(&dec_cache, &d_recon)?;

    let mut d_enc = Tensor2::zeros(batch.rows(), 2 * l);
    for r in 0..batch.rows() {
        for k in 0..l {
            let m = mu.get(r, k);
            let lv = logvar.get(r, k);
            let n = noise.get(r, k);
            let dz = d_latent.get(r, k);
            let sd = (0.5 * lv).exp();
            d_enc.set(r, k, dz + kl_weight * m / rows);
            d_enc.set(r, l + k, dz * n * 0.5 * sd + kl_weight * 0.5 * (lv.exp() - 1.0) / rows);
        }
    }
    let (enc_grads, _) = model.encoder.backward_cached(&enc_cache, &d_enc)?;
    Ok((loss, enc_grads, dec_grads))
}

fn normal_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Train a VAE on the bank with SGD + momentum.
pub fn train_vae(bank: &FeatureBank, config: &VaeConfig) -> Result<(VaeModel, LossHistory)> {
    if bank.is_empty() {
        return Err(Error::InvalidInput("cannot train a VAE on an empty bank".into()));
    }
    if config.batch_size == 0 || config.latent_dim == 0 {
        return Err(Error::InvalidInput("batch_size and latent_dim must be > 0".into()));
    }
    let mut rng = rng_for(config.seed, stream::VAE);
    let mut model = VaeModel::new(bank.dim(), config, &mut rng)?;
    let mut enc_opt = OptimState::new(OptimKind::sgd(config.lr, config.momentum))?;
    let mut dec_opt = OptimState::new(OptimKind::sgd(config.lr, config.momentum))?;
    let mut order: Vec<usize> = (0..bank.len()).collect();

    let mut history = Vec::with_capacity(config.epochs + 1);
    {
        // Initial loss over the whole bank with one fixed noise draw.
        let noise = normal_tensor(bank.len(), config.latent_dim, &mut rng_for(config.seed ^ 0x5eed, stream::VAE));
        history.push(vae_loss(&model, &bank.features, &noise, config.kl_weight)?.total);
    }
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let x = bank.features.select_rows(chunk);
            let noise = normal_tensor(chunk.len(), config.latent_dim, &mut rng);
            let (loss, ge, gd) = vae_loss_grad(&model, &x, &noise, config.kl_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric("VAE loss diverged".into()));
            }
            enc_opt.step(&mut model.encoder, &ge)?;
            dec_opt.step(&mut model.decoder, &gd)?;
            total += loss.total;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((model, LossHistory(history)))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl GanModel {
    pub fn new(feature_dim: usize, config: &GanConfig, rng: &mut Rng) -> Result<Self> {
        let mut gen = vec![config.latent_dim];
        gen.extend(config.hidden.iter().rev());
        gen.push(feature_dim);
        let mut disc = vec![feature_dim];
        disc.extend(&config.hidden);
        disc.push(1);
        Ok(GanModel {
            generator: MlpParams::init(&gen, Activation::leaky(), Activation::Identity, rng)?,
            discriminator: MlpParams::init(&disc, Activation::leaky(), Activation::Identity, rng)?,
            latent_dim: config.latent_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.input_dim() != self.latent_dim
            || self.discriminator.input_dim() != self.generator.output_dim()
            || self.discriminator.output_dim() != 1
        {
            return shape_err("GAN generator/discriminator widths do not chain");
        }
        Ok(())
    }
}

/// Discriminator loss `softplus(-D(real)) + softplus(D(G(u)))` (batch means)
/// with gradients for the discriminator, plus its real/fake accuracy.
pub fn gan_disc_loss_grad(model: &GanModel, real: &Tensor2, noise: &Tensor2) -> Result<(f64, MlpGrads, f64)> {
    let fake = model.generator.forward(noise)?;
    let (d_real, c_real) = model.discriminator.forward_cached(real)?;
    let (d_fake, c_fake) = model.discriminator.forward_cached(&fake)?;
    let (nr, nf) = (real.rows() as f64, fake.rows() as f64);
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut up_real = Tensor2::zeros(real.rows(), 1);
    for (i, &a) in d_real.data().iter().enumerate() {
        loss += softplus(-a) / nr;
        up_real.data_mut()[i] = -crate::metric::sigmoid(-a) / nr;
        correct += (a > 0.0) as usize;
    }
    let mut up_fake = Tensor2::zeros(fake.rows(), 1);
    for (i, &a) in d_fake.data().iter().enumerate() {
        loss += softplus(a) / nf;
        up_fake.data_mut()[i] = crate::metric::sigmoid(a) / nf;
        correct += (a <= 0.0) as usize;
    }
    let (mut g, _) = model.discriminator.backward_cached(&c_real, &up_real)?;
    let (gf, _) = model.discriminator.backward_cached(&c_fake, &up_fake)?;
    g.add_scaled(&gf, 1.0);
    let acc = correct as f64 / (nr + nf);
    Ok((loss, g, acc))
}

/// Non-saturating generator loss `softplus(-D(G(u)))` (batch mean) with
/// generator gradients.
pub fn gan_gen_loss_grad(model: &GanModel, noise: &Tensor2) -> Result<(f64, MlpGrads)> {
    let (fake, g_cache) = model.generator.forward_cached(noise)?;
    let (d_fake, d_cache) = model.discriminator.forward_cached(&fake)?;
    let n = fake.rows() as f64;
    let mut loss = 0.0;
    let mut up = Tensor2::zeros(fake.rows(), 1);
    for (i, &a) in d_fake.data().iter().enumerate() {
        loss += softplus(-a) / n;
        up.data_mut()[i] = -crate::metric::sigmoid(-a) / n;
    }
    let (_, d_fake_in) = model.discriminator.backward_cached(&d_cache, &up)?;
    let (g, _) = model.generator.backward_cached(&g_cache, &d_fake_in)?;
    Ok((loss, g))
}

/// Per-epoch GAN training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanHistory {
    pub disc_loss: Vec<f64>,
    pub gen_loss: Vec<f64>,
    pub disc_accuracy: Vec<f64>,
}

/// Alternating 1:1 discriminator/generator Adam updates.
pub fn train_gan(bank: &FeatureBank, config: &GanConfig) -> Result<(GanModel, GanHistory)> {
    if bank.is_empty() {
        return Err(Error::InvalidInput("cannot train a GAN on an empty bank".into()));
    }
    if config.batch_size == 0 || config.latent_dim == 0 {
        return Err(Error::InvalidInput("batch_size and latent_dim must be > 0".into()));
    }
    let mut rng = rng_for(config.seed, stream::GAN);
    let mut model = GanModel::new(bank.dim(), config, &mut rng)?;
    let adam = OptimKind::Adam {
        lr: config.lr,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut d_opt = OptimState::new(adam)?;
    let mut g_opt = OptimState::new(adam)?;
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut hist = GanHistory::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut dl, mut gl, mut acc, mut batches) = (0.0, 0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let real = bank.features.select_rows(chunk);
            let noise = normal_tensor(chunk.len(), config.latent_dim, &mut rng);
            let (l, g, a) = gan_disc_loss_grad(&model, &real, &noise)?;
            d_opt.step(&mut model.discriminator, &g)?;
            let noise = normal_tensor(chunk.len(), config.latent_dim, &mut rng);
            let (lg, gg) = gan_gen_loss_grad(&model, &noise)?;
            g_opt.step(&mut model.generator, &gg)?;
            dl += l;
            gl += lg;
            acc += a;
            batches += 1;
        }
        let b = batches as f64;
        hist.disc_loss.push(dl / b);
        hist.gen_loss.push(gl / b);
        hist.disc_accuracy.push(acc / b);
    }
    Ok((model, hist))
}

impl KnnSampler {
    pub fn new(bank: FeatureBank) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::InvalidInput("1-NN sampler needs a nonempty bank".into()));
        }
        Ok(KnnSampler { bank })
    }
}

/// Bank row with the highest cosine similarity to `query`; ties go to the
/// lowest row index.
pub fn knn_project(sampler: &KnnSampler, query: &[f64]) -> Result<(Vec<f64>, usize)> {
    let i = nearest_row(&sampler.bank.features, query)?;
    Ok((sampler.bank.features.row(i).to_vec(), i))
}

/// Any of the supported manifold samplers.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Vae(VaeModel),
    Gan(GanModel),
    Knn(KnnSampler),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Vae,
    Gan,
    Knn,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Vae => "vae",
            SamplerKind::Gan => "gan",
            SamplerKind::Knn => "knn",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(SamplerKind::Vae),
            "gan" => Ok(SamplerKind::Gan),
            "knn" | "1nn" => Ok(SamplerKind::Knn),
            _ => Err(Error::InvalidInput(format!("unknown sampler '{s}'"))),
        }
    }
}

impl Sampler {
    pub fn kind(&self) -> SamplerKind {
        match self {
            Sampler::Vae(_) => SamplerKind::Vae,
            Sampler::Gan(_) => SamplerKind::Gan,
            Sampler::Knn(_) => SamplerKind::Knn,
        }
    }

    /// The latent-to-feature network, if this sampler has one.
    pub fn decoder(&self) -> Option<&MlpParams> {
        match self {
            Sampler::Vae(v) => Some(&v.decoder),
            Sampler::Gan(g) => Some(&g.generator),
            Sampler::Knn(_) => None,
        }
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.decoder().map(MlpParams::input_dim)
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            Sampler::Vae(v) => v.encoder.fingerprint() ^ v.decoder.fingerprint().rotate_left(1),
            Sampler::Gan(g) => g.generator.fingerprint() ^ g.discriminator.fingerprint().rotate_left(1),
            Sampler::Knn(k) => {
                let mut h = 0u64;
                for v in k.bank.features.data() {
                    h = h.rotate_left(5) ^ v.to_bits();
                }
                h
            }
        }
    }
}

/// `G(u)` for a generative sampler.
pub fn decode(sampler: &Sampler, u: &[f64]) -> Result<Vec<f64>> {
    let dec = sampler
        .decoder()
        .ok_or_else(|| Error::InvalidInput("the 1-NN sampler has no decoder; use knn_project".into()))?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("latent vector is not finite".into()));
    }
    let mut tape = crate::numerics::VecTape::default();
    Ok(dec.forward_vec(u, &mut tape)?.to_vec())
}

/// Mean over `n` prior draws of the best cosine similarity between the
/// decoded sample and any bank row.
pub fn prior_coverage(sampler: &Sampler, bank: &FeatureBank, n: usize, seed: u64) -> Result<f64> {
    let latent = sampler
        .latent_dim()
        .ok_or_else(|| Error::InvalidInput("coverage needs a generative sampler".into()))?;
    let mut rng = rng_for(seed, 0xC0FE);
    let mut total = 0.0;
    for _ in 0..n {
        let u: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = decode(sampler, &u)?;
        let best = bank
            .features
            .iter_rows()
            .map(|r| cosine_sim(&z, r).unwrap_or(-1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Layer};

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    /// Identity encoder (mu = x, logvar = 0 given zero weights) on 1-d data.
    fn tiny_vae(mu_bias: f64, logvar_bias: f64) -> VaeModel {
        let encoder = MlpParams::from_layers(vec![Layer {
            weight: t(&[&[0.0, 0.0]]),
            bias: t(&[&[mu_bias, logvar_bias]]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let decoder = MlpParams::from_layers(vec![Layer {
            weight: t(&[&[1.0]]),
            bias: t(&[&[0.0]]),
            activation: Activation::Identity,
        }])
        .unwrap();
        VaeModel {
            encoder,
            decoder,
            latent_dim: 1,
        }
    }

    #[test]
    fn perfect_reconstruction_at_prior_has_zero_loss() {
        let m = tiny_vae(0.0, 0.0);
        let l = vae_loss(&m, &t(&[&[0.0]]), &t(&[&[0.0]]), 1.0).unwrap();
        assert_eq!((l.total, l.recon, l.kl), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kl_of_unit_mean() {
        let m = tiny_vae(1.0, 0.0);
        let l = vae_loss(&m, &t(&[&[1.0]]), &t(&[&[0.0]]), 1.0).unwrap();
        assert!((l.kl - 0.5).abs() < 1e-15);
        assert_eq!(l.recon, 0.0);
    }

    #[test]
    fn recon_element_is_abs_plus_square() {
        assert_eq!(recon_loss(&t(&[&[1.0]]), &t(&[&[0.0]])), 2.0);
    }

    #[test]
    fn reparameterize_examples() {
        let mu = t(&[&[0.5, -1.0]]);
        let zero = t(&[&[0.0, 0.0]]);
        let n = t(&[&[0.3, 2.0]]);
        assert_eq!(reparameterize(&mu, &zero, &zero).unwrap(), mu);
        assert_eq!(reparameterize(&mu, &zero, &n).unwrap().data(), &[0.8, 1.0]);
        let lv = t(&[&[2.0 * 2f64.ln(), 2.0 * 2f64.ln()]]);
        let z = reparameterize(&mu, &lv, &n).unwrap();
        assert!((z.data()[0] - 1.1).abs() < 1e-12 && (z.data()[1] - 3.0).abs() < 1e-12);
        assert!(reparameterize(&mu, &zero, &t(&[&[1.0]])).is_err());
    }

    fn random_bank(rows: usize, dim: usize, seed: u64) -> FeatureBank {
        let mut rng = rng_for(seed, 77);
        let mut f = normal_tensor(rows, dim, &mut rng);
        crate::metric::normalize_rows(&mut f).unwrap();
        FeatureBank {
            features: f,
            labels: (0..rows).map(|i| i % 2).collect(),
            domains: vec![0; rows],
            num_classes: 2,
        }
    }

    #[test]
    fn vae_gradients_match_finite_differences() {
        for seed in 0..20 {
            let cfg = VaeConfig {
                latent_dim: 3,
                hidden: vec![6],
                ..VaeConfig::default()
            };
            let mut rng = rng_for(seed, 1);
            let model = VaeModel::new(5, &cfg, &mut rng).unwrap();
            let x = random_bank(4, 5, seed).features;
            let noise = normal_tensor(4, 3, &mut rng);
            let enc_err = grad_check(&model.encoder, |enc| {
                let m = VaeModel {
                    encoder: enc.clone(),
                    ..model.clone()
                };
                let (l, ge, _) = vae_loss_grad(&m, &x, &noise, 0.7)?;
                Ok((l.total, ge))
            })
            .unwrap();
            let dec_err = grad_check(&model.decoder, |dec| {
                let m = VaeModel {
                    decoder: dec.clone(),
                    ..model.clone()
                };
                let (l, _, gd) = vae_loss_grad(&m, &x, &noise, 0.7)?;
                Ok((l.total, gd))
            })
            .unwrap();
            assert!(enc_err < 1e-5 && dec_err < 1e-5, "seed {seed}: {enc_err} {dec_err}");
        }
    }

    #[test]
    fn gan_gradients_match_finite_differences() {
        for seed in 0..20 {
            let cfg = GanConfig {
                latent_dim: 3,
                hidden: vec![6],
                ..GanConfig::default()
            };
            let mut rng = rng_for(seed, 2);
            let model = GanModel::new(4, &cfg, &mut rng).unwrap();
            let real = random_bank(5, 4, seed).features;
            let noise = normal_tensor(5, 3, &mut rng);
            let d_err = grad_check(&model.discriminator, |d| {
                let m = GanModel {
                    discriminator: d.clone(),
                    ..model.clone()
                };
                let (l, g, _) = gan_disc_loss_grad(&m, &real, &noise)?;
                Ok((l, g))
            })
            .unwrap();
            let g_err = grad_check(&model.generator, |g| {
                let m = GanModel {
                    generator: g.clone(),
                    ..model.clone()
                };
                gan_gen_loss_grad(&m, &noise)
            })
            .unwrap();
            assert!(d_err < 1e-5 && g_err < 1e-5, "seed {seed}: {d_err} {g_err}");
        }
    }

    #[test]
    fn knn_examples() {
        let bank = FeatureBank {
            features: t(&[&[1.0, 0.0], &[0.0, 1.0]]),
            labels: vec![0, 1],
            domains: vec![0, 0],
            num_classes: 2,
        };
        let s = KnnSampler::new(bank.clone()).unwrap();
        assert_eq!(knn_project(&s, &[0.0, 3.0]).unwrap(), (vec![0.0, 1.0], 1));
        assert_eq!(knn_project(&s, &[1.0, 1.0]).unwrap().1, 0);
        let one = KnnSampler::new(bank.select(&[1])).unwrap();
        assert_eq!(knn_project(&one, &[1.0, -0.2]).unwrap().1, 0);
        assert!(knn_project(&s, &[0.0, 0.0]).is_err());
        assert!(KnnSampler::new(bank.select(&[])).is_err());
    }

    #[test]
    fn knn_returns_a_stored_row_verbatim() {
        let bank = random_bank(30, 4, 3);
        let s = KnnSampler::new(bank.clone()).unwrap();
        let (row, idx) = knn_project(&s, &[0.3, -0.1, 0.8, 0.2]).unwrap();
        assert!(row.iter().zip(bank.features.row(idx)).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn decode_contract() {
        let identity = MlpParams::from_layers(vec![Layer {
            weight: t(&[&[1.0, 0.0], &[0.0, 1.0]]),
            bias: t(&[&[0.0, 0.0]]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let gan = Sampler::Gan(GanModel {
            generator: identity.clone(),
            discriminator: MlpParams::init(&[2, 1], Activation::Identity, Activation::Identity, &mut rng_for(0, 0))
                .unwrap(),
            latent_dim: 2,
        });
        assert_eq!(decode(&gan, &[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);
        assert!(decode(&gan, &[1.0]).is_err());

        let mut rng = rng_for(5, 5);
        let vae = VaeModel::new(6, &VaeConfig::default(), &mut rng).unwrap();
        let u: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let s = Sampler::Vae(vae.clone());
        let a = decode(&s, &u).unwrap();
        assert_eq!(a, decode(&s, &u).unwrap());
        let oracle = vae.decoder.forward(&Tensor2::row_vector(&u)).unwrap();
        for (p, q) in a.iter().zip(oracle.data()) {
            assert!((p - q).abs() < 1e-14);
        }
        let knn = Sampler::Knn(KnnSampler::new(random_bank(3, 2, 0)).unwrap());
        assert!(decode(&knn, &[0.0, 0.0]).is_err());
    }
}
