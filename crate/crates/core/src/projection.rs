//! Inference-time projection of target features onto the source manifold.
//!
//! For a target feature `z_t`, a latent `u ~ N(0, I)` is moved by plain
//! gradient descent on `1 - cos(z_t, G(u))` for a fixed number of steps. The
//! full loss curve is smoothed with a centred moving average and the
//! stopping index is the interior point with the largest discrete second
//! difference. The decoded latent at that index is the projected feature.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::classifier::predict;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generative::{knn_project, Sampler};
use crate::metric::{normalize_rows, normalized};
use crate::numerics::{dot, norm, MlpParams, Tensor2, VecTape};
use crate::pipeline::Pipeline;
use crate::rng::{derive_seed, rng_for};

/// Losses at or below this are treated as exact alignment (loss and gradient zero).
pub const ALIGNED_EPS: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    /// Gradient-descent step on the latent.
    pub beta: f64,
    pub max_iters: usize,
    /// Odd smoothing window.
    pub window: usize,
    pub init_seed: u64,
    pub restarts: usize,
    /// Keep every `history_stride`-th latent; others are recovered by replay.
    pub history_stride: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            beta: 0.01,
            max_iters: 2000,
            window: 25,
            init_seed: 0,
            restarts: 4,
            history_stride: 1,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.max_iters < 3 {
            return Err(Error::InvalidInput("max_iters must be >= 3".into()));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("window must be odd and >= 1, got {}", self.window)));
        }
        if self.restarts == 0 || self.history_stride == 0 {
            return Err(Error::InvalidInput("restarts and history_stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTrace {
    /// Latent iterates; entry `k` is the latent at iteration `k * latent_stride`.
    pub latent_history: Vec<Vec<f64>>,
    pub latent_stride: usize,
    pub u_init: Vec<f64>,
    /// `loss_history[i]` is the loss of `G(U[i])`, evaluated before step `i`.
    pub loss_history: Vec<f64>,
    pub smoothed_loss: Vec<f64>,
    pub n_star: usize,
    pub z_t_star: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Which restart produced this trace.
    pub restart: usize,
    pub beta: f64,
}

impl ProjectionTrace {
    pub fn loss_at_n_star(&self) -> f64 {
        self.loss_history[self.n_star]
    }

    pub fn len(&self) -> usize {
        self.loss_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss_history.is_empty()
    }

    /// Latent at iteration `i`, replaying descent from the nearest stored
    /// iterate when the history is strided.
    pub fn latent_at(&self, i: usize, z_t: &[f64], decoder: &MlpParams) -> Result<Vec<f64>> {
        if i >= self.len() {
            return Err(Error::InvalidInput(format!("iteration {i} beyond trace of {}", self.len())));
        }
        let k = i / self.latent_stride;
        let mut u = self.latent_history[k].clone();
        let mut tape = VecTape::default();
        for _ in k * self.latent_stride..i {
            let (_, g) = loss_and_latent_grad(z_t, decoder, &u, &mut tape)?;
            for (x, gx) in u.iter_mut().zip(&g) {
                *x -= self.beta * gx;
            }
        }
        Ok(u)
    }

    /// `iter,loss,smoothed_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss,smoothed_loss\n");
        for (i, (l, sm)) in self.loss_history.iter().zip(&self.smoothed_loss).enumerate() {
            let _ = writeln!(s, "{i},{l},{sm}");
        }
        s
    }
}

/// Cosine distance `1 - cos(z_t, z)`, in `[0, 2]`.
pub fn loss_ls(z_t: &[f64], z: &[f64]) -> Result<f64> {
    Ok(loss_ls_grad(z_t, z)?.0)
}

/// Cosine distance and its gradient with respect to `z`.
pub fn loss_ls_grad(z_t: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z_t.len() != z.len() {
        return Err(Error::Shape(format!("target has {} values, decoded feature {}", z_t.len(), z.len())));
    }
    let (nt, nz) = (norm(z_t), norm(z));
    if !(nt > 0.0) || !(nz > 0.0) || !nt.is_finite() || !nz.is_finite() {
        return Err(Error::Numeric("cosine distance with a zero or non-finite vector".into()));
    }
    let cos = (dot(z_t, z) / (nt * nz)).clamp(-1.0, 1.0);
    let loss = 1.0 - cos;
    if loss <= ALIGNED_EPS {
        return Ok((0.0, vec![0.0; z.len()]));
    }
    // d/dz of -(z_t . z)/(|z_t||z|) = -(z_t/|z_t| - cos * z/|z|) / |z|
    let grad = z_t
        .iter()
        .zip(z)
        .map(|(&t, &v)| -(t / nt - cos * v / nz) / nz)
        .collect();
    Ok((loss, grad))
}

/// Loss of `G(u)` against `z_t` and its gradient with respect to `u`.
pub fn loss_and_latent_grad(z_t: &[f64], decoder: &MlpParams, u: &[f64], tape: &mut VecTape) -> Result<(f64, Vec<f64>)> {
    let z = decoder.forward_vec(u, tape)?.to_vec();
    let (loss, gz) = loss_ls_grad(z_t, &z)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("projection loss is not finite".into()));
    }
    let gu = decoder.input_grad_vec(tape, &gz)?;
    Ok((loss, gu))
}

/// Centred moving average with windows truncated at the sequence ends.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("window must be odd and >= 1, got {window}")));
    }
    let half = window / 2;
    let n = values.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Interior index maximising `L[i+1] - 2 L[i] + L[i-1]`; ties go to the
/// smallest index.
pub fn elbow_index(values: &[f64]) -> Result<usize> {
    if values.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "elbow detection needs at least 3 points, got {}",
            values.len()
        )));
    }
    let mut best = (f64::NEG_INFINITY, 1usize);
    for i in 1..values.len() - 1 {
        let d2 = values[i + 1] - 2.0 * values[i] + values[i - 1];
        if d2 > best.0 {
            best = (d2, i);
        }
    }
    Ok(best.1)
}

/// Elbow of a smoothed curve, searched only where the point and both of its
/// neighbours were averaged over a complete window. Truncated edge windows
/// bend a still-falling curve upward at the end, which would otherwise win.
/// Falls back to the plain search when no such index exists.
pub fn guarded_elbow(smoothed: &[f64], window: usize) -> Result<usize> {
    let n = smoothed.len();
    let h = window / 2;
    let lo = h + 1;
    let hi = n.saturating_sub(2 + h);
    if n < 3 || hi < lo {
        return elbow_index(smoothed);
    }
    Ok(lo - 1 + elbow_index(&smoothed[lo - 1..=hi + 1])?)
}

/// Seed of the latent initialisation for one target and restart.
pub fn target_seed(init_seed: u64, target_index: usize, restart: usize) -> u64 {
    derive_seed(derive_seed(init_seed, target_index as u64), restart as u64)
}

fn initial_latent(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 0);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Run the descent from a given initial latent.
pub fn project_from(z_t: &[f64], decoder: &MlpParams, u_init: &[f64], config: &ProjectionConfig) -> Result<ProjectionTrace> {
    config.validate()?;
    let m = config.max_iters;
    let stride = config.history_stride;
    let mut u = u_init.to_vec();
    let mut tape = VecTape::default();
    let mut losses = Vec::with_capacity(m);
    let mut latents = Vec::with_capacity(m / stride + 1);
    for i in 0..m {
        let (loss, g) = loss_and_latent_grad(z_t, decoder, &u, &mut tape)?;
        if i % stride == 0 {
            latents.push(u.clone());
        }
        losses.push(loss);
        for (x, gx) in u.iter_mut().zip(&g) {
            *x -= config.beta * gx;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("latent diverged at iteration {i}")));
        }
    }
    let smoothed = smooth(&losses, config.window)?;
    let n_star = guarded_elbow(&smoothed, config.window)?;
    let mut trace = ProjectionTrace {
        latent_history: latents,
        latent_stride: stride,
        u_init: u_init.to_vec(),
        initial_loss: losses[0],
        final_loss: losses[m - 1],
        loss_history: losses,
        smoothed_loss: smoothed,
        n_star,
        z_t_star: Vec::new(),
        restart: 0,
        beta: config.beta,
    };
    let u_star = trace.latent_at(n_star, z_t, decoder)?;
    trace.z_t_star = decoder.forward_vec(&u_star, &mut tape)?.to_vec();
    Ok(trace)
}

/// Project one target feature through a generative sampler. With several
/// restarts the trace with the lowest loss at its stopping index wins.
pub fn project(z_t: &[f64], sampler: &Sampler, config: &ProjectionConfig, target_index: usize) -> Result<ProjectionTrace> {
    config.validate()?;
    let decoder = sampler
        .decoder()
        .ok_or_else(|| Error::InvalidInput("projection needs a generative sampler".into()))?;
    if z_t.len() != decoder.output_dim() {
        return Err(Error::Shape(format!(
            "target feature has {} values, sampler produces {}",
            z_t.len(),
            decoder.output_dim()
        )));
    }
    if !(norm(z_t) > 0.0) {
        return Err(Error::Numeric("target feature has zero norm".into()));
    }
    let mut best: Option<ProjectionTrace> = None;
    let mut failures = Vec::new();
    for r in 0..config.restarts {
        let u0 = initial_latent(decoder.input_dim(), target_seed(config.init_seed, target_index, r));
        match project_from(z_t, decoder, &u0, config) {
            Ok(mut t) => {
                t.restart = r;
                if best.as_ref().is_none_or(|b| t.loss_at_n_star() < b.loss_at_n_star()) {
                    best = Some(t);
                }
            }
            Err(e) => {
                log::warn!("target {target_index} restart {r} aborted: {e}");
                failures.push(e.to_string());
            }
        }
    }
    best.ok_or_else(|| Error::Numeric(format!("every restart failed for target {target_index}: {}", failures.join("; "))))
}

/// One target's inference outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct InferResult {
    pub index: usize,
    pub label: usize,
    /// Normalised extractor feature of the target.
    pub z_t: Vec<f64>,
    /// Feature handed to the classifier.
    pub z_t_star: Vec<f64>,
    pub trace: Option<ProjectionTrace>,
    /// Bank row chosen by the 1-NN sampler.
    pub knn_index: Option<usize>,
}

fn target_feature(pipeline: &Pipeline, x_t: &[f64]) -> Result<Vec<f64>> {
    let raw = pipeline.metric.net.forward(&Tensor2::row_vector(x_t))?;
    let row = raw.row(0);
    if pipeline.normalize {
        normalized(row)
    } else {
        Ok(row.to_vec())
    }
}

fn classifier_input(pipeline: &Pipeline, z: &[f64]) -> Result<Tensor2> {
    let mut t = Tensor2::row_vector(z);
    if pipeline.normalize {
        normalize_rows(&mut t)?;
    }
    Ok(t)
}

/// Classify one target: embed, project (or retrieve), classify. Model
/// parameters are only read.
pub fn infer(x_t: &[f64], pipeline: &Pipeline, config: &ProjectionConfig, target_index: usize) -> Result<InferResult> {
    let sampler = pipeline
        .sampler
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("pipeline has no sampler".into()))?;
    let z_t = target_feature(pipeline, x_t)?;
    let (z_star, trace, knn_index) = match sampler {
        Sampler::Knn(knn) => {
            let (row, idx) = knn_project(knn, &z_t)?;
            (row, None, Some(idx))
        }
        _ => {
            let t = project(&z_t, sampler, config, target_index)?;
            (t.z_t_star.clone(), Some(t), None)
        }
    };
    let x = classifier_input(pipeline, &z_star)?;
    let label = predict(&pipeline.classifier, &x)?[0];
    Ok(InferResult {
        index: target_index,
        label,
        z_t,
        z_t_star: x.into_data(),
        trace,
        knn_index,
    })
}

/// Worker-thread cap from `TARPRO_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("TARPRO_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Infer every example of `targets` in parallel. Output order follows the
/// input order and does not depend on the thread count.
pub fn infer_all(
    targets: &Dataset,
    pipeline: &Pipeline,
    config: &ProjectionConfig,
    threads: Option<usize>,
) -> Result<Vec<InferResult>> {
    let threads = threads.or_else(env_threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        targets
            .examples
            .par_iter()
            .enumerate()
            .map(|(i, e)| infer(&e.x, pipeline, config, i))
            .collect()
    })
}

/// How offsets in an epsilon sweep are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    /// Offsets are iteration counts.
    Absolute,
    /// Offsets are fractions of each trace's own `n_star`.
    FractionOfNStar,
}

/// Accuracy when every target stops at `clamp(n_star + eps)` instead of
/// `n_star`, for each offset.
pub fn sweep_epsilon(
    results: &[InferResult],
    truth: &[usize],
    offsets: &[f64],
    mode: EpsilonMode,
    pipeline: &Pipeline,
) -> Result<Vec<f64>> {
    let decoder = pipeline
        .sampler
        .as_ref()
        .and_then(Sampler::decoder)
        .ok_or_else(|| Error::InvalidInput("epsilon sweep needs a generative sampler".into()))?;
    if results.len() != truth.len() {
        return Err(Error::Shape("results and labels differ in length".into()));
    }
    let mut tape = VecTape::default();
    offsets
        .iter()
        .map(|&eps| {
            let mut correct = 0usize;
            for (r, &y) in results.iter().zip(truth) {
                let trace = r
                    .trace
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("result has no projection trace".into()))?;
                let shift = match mode {
                    EpsilonMode::Absolute => eps.round(),
                    EpsilonMode::FractionOfNStar => (eps * trace.n_star as f64).round(),
                };
                let idx = (trace.n_star as f64 + shift).clamp(0.0, (trace.len() - 1) as f64) as usize;
                let u = trace.latent_at(idx, &r.z_t, decoder)?;
                let z = decoder.forward_vec(&u, &mut tape)?.to_vec();
                let x = classifier_input(pipeline, &z)?;
                correct += (predict(&pipeline.classifier, &x)?[0] == y) as usize;
            }
            Ok(if results.is_empty() {
                0.0
            } else {
                correct as f64 / results.len() as f64
            })
        })
        .collect()
}

/// `target_index,n_star,initial_loss,final_loss,pred,true` rows.
pub fn summary_csv(results: &[InferResult], truth: &[usize]) -> String {
    let mut s = String::from("target_index,n_star,initial_loss,final_loss,pred,true\n");
    for (r, y) in results.iter().zip(truth) {
        let (n, a, b) = match &r.trace {
            Some(t) => (t.n_star.to_string(), t.initial_loss.to_string(), t.final_loss.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(s, "{},{n},{a},{b},{},{y}", r.index, r.label);
    }
    s
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn loss_ls_is_scale_invariant_and_bounded(
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            b in proptest::collection::vec(-3.0f64..3.0, 4),
            k in 0.01f64..50.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let l = loss_ls(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
            let scaled: Vec<f64> = b.iter().map(|v| v * k).collect();
            prop_assert!((loss_ls(&a, &scaled).unwrap() - l).abs() < 1e-12);
            let scaled_t: Vec<f64> = a.iter().map(|v| v * k).collect();
            prop_assert!((loss_ls(&scaled_t, &b).unwrap() - l).abs() < 1e-12);
        }

        #[test]
        fn elbow_is_invariant_to_positive_affine_maps(
            v in proptest::collection::vec(-10i32..10, 3..30),
            shift in -100i32..100,
            slope_pow in 0u32..4,
        ) {
            // Integer-valued data and power-of-two slopes keep the arithmetic exact.
            let base: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let slope = (1u32 << slope_pow) as f64;
            let mapped: Vec<f64> = base.iter().map(|x| slope * x + shift as f64).collect();
            prop_assert_eq!(elbow_index(&base).unwrap(), elbow_index(&mapped).unwrap());
        }

        #[test]
        fn smoothing_preserves_constants_and_length(c in -5.0f64..5.0, n in 1usize..60, half in 0usize..10) {
            let out = smooth(&vec![c; n], 2 * half + 1).unwrap();
            prop_assert_eq!(out.len(), n);
            for v in out {
                prop_assert!((v - c).abs() <= 1e-12);
            }
        }
    }
}
