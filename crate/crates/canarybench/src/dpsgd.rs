//! (DP-)SGD training for the toy LM.
//!
//! DP mode differs from the baseline in exactly four places: Poisson
//! batching, per-sample clipping to norm C, Gaussian noise on the aggregated
//! gradient, and privacy accounting of every step. Everything else — the
//! optimizer, the learning rate, the epoch budget — is shared, so a run pair
//! isolates the effect of DP.
//!
//! Aggregation is an ordered reduction over ascending dataset indices, which
//! makes training deterministic under any thread count and makes the
//! degenerate DP setting (sigma = 0, q = 1, C = inf) reproduce full-batch
//! non-DP training bit for bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant;
use crate::error::{Error, Result};
use crate::toylm::ToyLm;

/// Resolved privacy bundle tying a training run to the accountant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: u64,
}

/// Privacy knobs as they appear in a run configuration; resolved against the
/// dataset size to a full [`PrivacySpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpOptions {
    pub epsilon: f64,
    /// Defaults to 1 / N.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    /// Calibrated by the accountant when absent.
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
}

fn default_clip_norm() -> f64 {
    1.5
}

impl PrivacySpec {
    /// Resolve options against a dataset: q = batch/N, T = epochs * ceil(N/batch),
    /// delta defaults to 1/N, sigma is calibrated when not supplied.
    pub fn resolve(
        opts: &DpOptions,
        n_samples: usize,
        batch_size: usize,
        epochs: usize,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Config("cannot resolve privacy spec for empty dataset".into()));
        }
        let q = (batch_size as f64 / n_samples as f64).min(1.0);
        let steps = (epochs as u64) * (n_samples as u64).div_ceil(batch_size as u64);
        let delta = opts.delta.unwrap_or(1.0 / n_samples as f64);
        let noise_multiplier = match opts.noise_multiplier {
            Some(sigma) => sigma,
            None => accountant::calibrate_sigma(opts.epsilon, delta, q, steps)?,
        };
        let spec = PrivacySpec {
            epsilon: opts.epsilon,
            delta,
            clip_norm: opts.clip_norm,
            noise_multiplier,
            sampling_rate: q,
            steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} not in (0,1)", self.delta)));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config(format!("q {} not in (0,1]", self.sampling_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be > 0".into()));
        }
        if self.noise_multiplier < 0.0 {
            return Err(Error::Config("noise multiplier must be >= 0".into()));
        }
        Ok(())
    }

    /// Accounted epsilon after `steps` steps of this mechanism.
    pub fn accounted_epsilon(&self, steps: u64) -> Result<f64> {
        if self.noise_multiplier == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(accountant::epsilon(self.sampling_rate, self.noise_multiplier, steps, self.delta)?.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dp: Option<PrivacySpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            weight_decay: 0.01,
            epochs: 6,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dp: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("lr, batch size and epochs must be positive".into()));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

/// Per-step clipping telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipStats {
    pub step: u64,
    pub batch_actual_size: usize,
    /// Fraction of per-sample gradients whose pre-clip norm exceeded C.
    pub clipped_fraction: f64,
    pub mean_pre_clip_norm: f64,
    /// Largest per-sample norm after clipping; must never exceed C + 1e-9.
    pub max_post_clip_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Telemetry {
    pub time_per_epoch_s: Vec<f64>,
    pub total_time_s: f64,
    pub samples_processed: u64,
    pub throughput_samples_per_s: f64,
    #[serde(default)]
    pub power_w: Option<f64>,
    #[serde(default)]
    pub energy_kwh: Option<f64>,
}

impl Telemetry {
    /// Derive energy from a user-supplied average draw: kWh = W * h / 1000.
    pub fn with_power(mut self, watts: f64) -> Self {
        self.power_w = Some(watts);
        self.energy_kwh = Some(watts * (self.total_time_s / 3600.0) / 1000.0);
        self
    }
}

#[derive(Debug, Clone)]
pub struct EpochCheckpoint {
    pub epoch: usize,
    pub model: ToyLm,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: ToyLm,
    pub checkpoints: Vec<EpochCheckpoint>,
    pub clip_stats: Vec<ClipStats>,
    pub telemetry: Telemetry,
    /// Accounted epsilon at the final step (DP runs only), with the
    /// minimizing Rényi order.
    pub final_epsilon: Option<(f64, f64)>,
}

/// Each index enters the batch independently with probability q. The result
/// is ascending; an empty batch is a legitimate outcome.
pub fn poisson_sample(dataset_size: usize, q: f64, rng: &mut ChaCha20Rng) -> Vec<usize> {
    (0..dataset_size).filter(|_| rng.random::<f64>() < q).collect()
}

/// L2-clip a gradient to norm C. Returns the (possibly unscaled) vector and
/// whether clipping occurred. Non-finite gradients signal divergence.
pub fn clip(grad: &[f64], clip_norm: f64) -> Result<(Vec<f64>, bool)> {
    let mut sq = 0.0;
    for &g in grad {
        if !g.is_finite() {
            return Err(Error::Model("non-finite gradient: training diverged".into()));
        }
        sq += g * g;
    }
    let norm = sq.sqrt();
    if norm <= clip_norm || clip_norm.is_infinite() {
        return Ok((grad.to_vec(), false));
    }
    let scale = clip_norm / norm;
    Ok((grad.iter().map(|g| g * scale).collect(), true))
}

/// (Sum of clipped gradients + N(0, sigma^2 C^2 I)) / L_expected, where
/// L_expected = q * N is the constant denominator the accountant assumes.
pub fn noisy_aggregate(
    grads: &[Vec<f64>],
    dim: usize,
    clip_norm: f64,
    sigma: f64,
    l_expected: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for g in grads {
        for (s, gi) in sum.iter_mut().zip(g) {
            *s += gi;
        }
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma * clip_norm).expect("valid noise std");
        for s in &mut sum {
            *s += normal.sample(rng);
        }
    }
    for s in &mut sum {
        *s /= l_expected;
    }
    sum
}

/// AdamW with decoupled weight decay, applied to the (privatized) gradient.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(config: &TrainConfig, dim: usize) -> Self {
        AdamW {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * theta[i]);
        }
    }
}

fn per_sample_grads(model: &ToyLm, windows: &[Vec<u32>], batch: &[usize]) -> Result<Vec<Vec<f64>>> {
    batch
        .par_iter()
        .map(|&i| model.loss_and_grad(&windows[i]).map(|(_, g)| g))
        .collect()
}

/// Train a model. Non-DP mode: shuffled fixed-size batches without
/// replacement. DP mode: Poisson-sampled batches, per-sample clipping, noisy
/// aggregation, per-step accounting. Both modes run ceil(N/batch) steps per
/// epoch. When `checkpoint_dir` is given, per-epoch checkpoints (and the
/// abort checkpoint, should the budget be exceeded) are written there.
pub fn train(
    init: ToyLm,
    windows: &[Vec<u32>],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Model("no training windows".into()));
    }
    let n = windows.len();
    let dim = init.theta.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);

    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut sample_rng = ChaCha20Rng::seed_from_u64(config.seed);
    sample_rng.set_stream(2);
    let mut noise_rng = ChaCha20Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(3);

    // The per-step RDP curve is constant across the run.
    let dp_curve = match &config.dp {
        Some(dp) if dp.noise_multiplier > 0.0 => Some(accountant::rdp_curve(
            dp.sampling_rate,
            dp.noise_multiplier,
            &accountant::default_orders(),
        )?),
        _ => None,
    };

    let mut model = init;
    let mut optimizer = AdamW::new(config, dim);
    let mut clip_stats = Vec::new();
    let mut checkpoints = Vec::new();
    let mut time_per_epoch = Vec::new();
    let mut samples_processed: u64 = 0;
    let mut step: u64 = 0;
    let started = Instant::now();

    for epoch in 0..config.epochs {
        let epoch_started = Instant::now();
        // Non-DP batch plan for this epoch: a shuffled partition.
        let plan: Vec<Vec<usize>> = if config.dp.is_none() {
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = (shuffle_rng.random::<u64>() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
            order.chunks(config.batch_size).map(|c| c.to_vec()).collect()
        } else {
            Vec::new()
        };

        // DP mode runs the same number of steps but ignores the batch plan.
        #[allow(clippy::needless_range_loop)]
        for step_in_epoch in 0..steps_per_epoch {
            let update = match &config.dp {
                None => {
                    let mut batch = plan[step_in_epoch].clone();
                    batch.sort_unstable();
                    let grads = per_sample_grads(&model, windows, &batch)?;
                    samples_processed += batch.len() as u64;
                    // Same reduction arithmetic as the DP path (sum then
                    // divide), so the degenerate DP setting stays bit-equal.
                    let mut sum = vec![0.0; dim];
                    for g in &grads {
                        for (s, gi) in sum.iter_mut().zip(g) {
                            *s += gi;
                        }
                    }
                    let denom = batch.len() as f64;
                    for s in &mut sum {
                        *s /= denom;
                    }
                    sum
                }
                Some(dp) => {
                    let batch = poisson_sample(n, dp.sampling_rate, &mut sample_rng);
                    let raw = per_sample_grads(&model, windows, &batch)?;
                    samples_processed += batch.len() as u64;
                    let mut clipped = Vec::with_capacity(raw.len());
                    let mut clipped_count = 0usize;
                    let mut norm_sum = 0.0;
                    let mut max_post = 0.0f64;
                    for g in &raw {
                        let (c, was_clipped) = clip(g, dp.clip_norm)?;
                        norm_sum += g.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if was_clipped {
                            clipped_count += 1;
                        }
                        let post = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                        max_post = max_post.max(post);
                        clipped.push(c);
                    }
                    clip_stats.push(ClipStats {
                        step,
                        batch_actual_size: batch.len(),
                        clipped_fraction: if batch.is_empty() {
                            0.0
                        } else {
                            clipped_count as f64 / batch.len() as f64
                        },
                        mean_pre_clip_norm: if batch.is_empty() {
                            0.0
                        } else {
                            norm_sum / batch.len() as f64
                        },
                        max_post_clip_norm: max_post,
                    });
                    let l_expected = dp.sampling_rate * n as f64;
                    noisy_aggregate(
                        &clipped,
                        dim,
                        dp.clip_norm,
                        dp.noise_multiplier,
                        l_expected,
                        &mut noise_rng,
                    )
                }
            };

            optimizer.step(&mut model.theta, &update);
            model.step += 1;
            step += 1;

            if let Some(dp) = &config.dp {
                let eps_now = match &dp_curve {
                    Some(curve) => accountant::compose_and_convert(curve, step, dp.delta)?.0,
                    // sigma == 0 spends unbounded budget on the first step.
                    None => f64::INFINITY,
                };
                if eps_now > dp.epsilon + 1e-9 {
                    if let Some(dir) = checkpoint_dir {
                        std::fs::create_dir_all(dir)?;
                        model.save(&dir.join("abort_checkpoint.json"))?;
                    }
                    return Err(Error::BudgetExceeded { spent: eps_now, target: dp.epsilon, step });
                }
            }
        }

        time_per_epoch.push(epoch_started.elapsed().as_secs_f64());
        checkpoints.push(EpochCheckpoint { epoch, model: model.clone() });
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            model.save(&checkpoint_path(dir, epoch))?;
        }
    }

    let total_time_s = started.elapsed().as_secs_f64();
    let telemetry = Telemetry {
        time_per_epoch_s: time_per_epoch,
        total_time_s,
        samples_processed,
        throughput_samples_per_s: if total_time_s > 0.0 {
            samples_processed as f64 / total_time_s
        } else {
            0.0
        },
        power_w: None,
        energy_kwh: None,
    };

    let final_epsilon = match (&config.dp, &dp_curve) {
        (Some(dp), Some(curve)) => Some(accountant::compose_and_convert(curve, step, dp.delta)?),
        _ => None,
    };

    Ok(TrainOutput { model, checkpoints, clip_stats, telemetry, final_epsilon })
}

/// Epoch checkpoints are named by index so trajectory analysis can find them.
pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.json"))
}
