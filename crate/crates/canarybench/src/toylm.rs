//! Fixed-context autoregressive language model with exact per-sample
//! gradients.
//!
//! A k-gram MLP: the last `context` token embeddings are concatenated, passed
//! through one tanh layer, and projected to vocabulary logits. Small enough
//! that gradients can be verified against finite differences, which is what
//! the DP training loop's per-sample clipping guarantees rest on. All
//! arithmetic is f64 and everything is seeded, so training is reproducible
//! bit for bit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token::PAD_ID;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    /// Context length k: tokens are predicted from the previous k ids.
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl ToyLmConfig {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        ToyLmConfig { vocab_size, context: 8, embed_dim: 32, hidden_dim: 64, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.context == 0 || self.embed_dim == 0 || self.hidden_dim == 0
        {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Total parameter count: V*d + (k*d)*h + h + h*V + V.
    pub fn param_count(&self) -> usize {
        let (v, k, d, h) = (self.vocab_size, self.context, self.embed_dim, self.hidden_dim);
        v * d + (k * d) * h + h + h * v + v
    }
}

/// Offsets of the parameter blocks within the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct BlockLayout {
    pub embedding: (usize, usize),
    pub w1: (usize, usize),
    pub b1: (usize, usize),
    pub w2: (usize, usize),
    pub b2: (usize, usize),
}

impl BlockLayout {
    pub fn of(cfg: &ToyLmConfig) -> Self {
        let (v, k, d, h) = (cfg.vocab_size, cfg.context, cfg.embed_dim, cfg.hidden_dim);
        let emb = v * d;
        let w1 = k * d * h;
        BlockLayout {
            embedding: (0, emb),
            w1: (emb, emb + w1),
            b1: (emb + w1, emb + w1 + h),
            w2: (emb + w1 + h, emb + w1 + h + h * v),
            b2: (emb + w1 + h + h * v, emb + w1 + h + h * v + v),
        }
    }

    pub fn blocks(&self) -> [(&'static str, usize, usize); 5] {
        [
            ("embedding", self.embedding.0, self.embedding.1),
            ("w1", self.w1.0, self.w1.1),
            ("b1", self.b1.0, self.b1.1),
            ("w2", self.w2.0, self.w2.1),
            ("b2", self.b2.0, self.b2.1),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyLm {
    pub config: ToyLmConfig,
    /// Optimizer steps applied so far; carried in checkpoints.
    pub step: u64,
    pub theta: Vec<f64>,
}

impl ToyLm {
    /// Seeded init: weights uniform in ±1/sqrt(fan_in) per layer, biases zero.
    pub fn init(config: ToyLmConfig) -> Result<Self> {
        config.validate()?;
        let layout = BlockLayout::of(&config);
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut theta = vec![0.0; config.param_count()];
        let bounds = [
            (layout.embedding, 1.0 / (config.embed_dim as f64).sqrt()),
            (layout.w1, 1.0 / ((config.context * config.embed_dim) as f64).sqrt()),
            (layout.w2, 1.0 / (config.hidden_dim as f64).sqrt()),
        ];
        for ((start, end), bound) in bounds {
            for w in &mut theta[start..end] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(ToyLm { config, step: 0, theta })
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::of(&self.config)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Model(format!(
                "token id {bad} out of range for vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Left-pad or truncate a history to exactly k context ids.
    pub fn context_at(&self, window: &[u32], pos: usize) -> Vec<u32> {
        let k = self.config.context;
        let lo = pos.saturating_sub(k);
        let mut ctx = vec![PAD_ID; k - (pos - lo)];
        ctx.extend_from_slice(&window[lo..pos]);
        ctx
    }

    /// Logits for the next token given exactly k context ids.
    pub fn forward(&self, context: &[u32]) -> Result<Vec<f64>> {
        if context.len() != self.config.context {
            return Err(Error::Model(format!(
                "context length {} != k = {}",
                context.len(),
                self.config.context
            )));
        }
        self.check_ids(context)?;
        let (_x, _z, _a, logits) = self.forward_parts(context);
        Ok(logits)
    }

    /// (x, z, a, logits) for one context; backward needs the intermediates.
    fn forward_parts(&self, context: &[u32]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let layout = self.layout();
        let (v, k, d, h) = (cfg.vocab_size, cfg.context, cfg.embed_dim, cfg.hidden_dim);
        let emb = &self.theta[layout.embedding.0..layout.embedding.1];
        let w1 = &self.theta[layout.w1.0..layout.w1.1];
        let b1 = &self.theta[layout.b1.0..layout.b1.1];
        let w2 = &self.theta[layout.w2.0..layout.w2.1];
        let b2 = &self.theta[layout.b2.0..layout.b2.1];

        let mut x = vec![0.0; k * d];
        for (slot, &tok) in context.iter().enumerate() {
            let row = tok as usize * d;
            x[slot * d..(slot + 1) * d].copy_from_slice(&emb[row..row + d]);
        }

        let mut z = b1.to_vec();
        for p in 0..k * d {
            let xp = x[p];
            if xp != 0.0 {
                let row = &w1[p * h..(p + 1) * h];
                for i in 0..h {
                    z[i] += xp * row[i];
                }
            }
        }
        let a: Vec<f64> = z.iter().map(|&zi| zi.tanh()).collect();

        let mut logits = b2.to_vec();
        for i in 0..h {
            let ai = a[i];
            if ai != 0.0 {
                let row = &w2[i * v..(i + 1) * v];
                for j in 0..v {
                    logits[j] += ai * row[j];
                }
            }
        }
        (x, z, a, logits)
    }

    /// Stable log-softmax.
    pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
        logits.iter().map(|&l| l - lse).collect()
    }

    /// Mean next-token cross-entropy over a window and the exact gradient of
    /// that sample's loss with respect to every parameter, as a flat vector.
    /// Never pre-averaged across samples: DP-SGD clips this per sample.
    pub fn loss_and_grad(&self, window: &[u32]) -> Result<(f64, Vec<f64>)> {
        if window.len() < 2 {
            return Err(Error::Model("window must have at least 2 tokens".into()));
        }
        self.check_ids(window)?;
        let cfg = &self.config;
        let layout = self.layout();
        let (v, k, d, h) = (cfg.vocab_size, cfg.context, cfg.embed_dim, cfg.hidden_dim);
        let w1 = &self.theta[layout.w1.0..layout.w1.1];
        let w2 = &self.theta[layout.w2.0..layout.w2.1];

        let mut grad = vec![0.0; self.theta.len()];
        let mut total_loss = 0.0;
        let positions = window.len() - 1;
        let scale = 1.0 / positions as f64;

        for pos in 1..window.len() {
            let ctx = self.context_at(window, pos);
            let target = window[pos] as usize;
            let (x, _z, a, logits) = self.forward_parts(&ctx);
            let logp = Self::log_softmax(&logits);
            total_loss -= logp[target] * scale;

            // d loss / d logits = softmax - onehot, scaled by 1/positions
            let mut du: Vec<f64> = logp.iter().map(|&lp| lp.exp() * scale).collect();
            du[target] -= scale;

            // b2 and W2
            {
                let gb2 = &mut grad[layout.b2.0..layout.b2.1];
                for j in 0..v {
                    gb2[j] += du[j];
                }
            }
            let mut da = vec![0.0; h];
            {
                let gw2 = &mut grad[layout.w2.0..layout.w2.1];
                for i in 0..h {
                    let ai = a[i];
                    let row = &w2[i * v..(i + 1) * v];
                    let grow = &mut gw2[i * v..(i + 1) * v];
                    let mut acc = 0.0;
                    for j in 0..v {
                        grow[j] += ai * du[j];
                        acc += row[j] * du[j];
                    }
                    da[i] = acc;
                }
            }

            // tanh backprop, then b1 and W1
            let dz: Vec<f64> = (0..h).map(|i| da[i] * (1.0 - a[i] * a[i])).collect();
            {
                let gb1 = &mut grad[layout.b1.0..layout.b1.1];
                for i in 0..h {
                    gb1[i] += dz[i];
                }
            }
            let mut dx = vec![0.0; k * d];
            {
                let gw1 = &mut grad[layout.w1.0..layout.w1.1];
                for p in 0..k * d {
                    let xp = x[p];
                    let row = &w1[p * h..(p + 1) * h];
                    let grow = &mut gw1[p * h..(p + 1) * h];
                    let mut acc = 0.0;
                    for i in 0..h {
                        grow[i] += xp * dz[i];
                        acc += row[i] * dz[i];
                    }
                    dx[p] = acc;
                }
            }

            // embeddings accumulate per context slot
            {
                let gemb = &mut grad[layout.embedding.0..layout.embedding.1];
                for (slot, &tok) in ctx.iter().enumerate() {
                    let row = tok as usize * d;
                    for r in 0..d {
                        gemb[row + r] += dx[slot * d + r];
                    }
                }
            }
        }
        Ok((total_loss, grad))
    }

    /// Gradient of the mean loss of a batch, accumulated in one buffer.
    /// Cross-checks that averaged per-sample gradients equal the batch-loss
    /// gradient.
    pub fn batch_loss_and_grad(&self, windows: &[Vec<u32>]) -> Result<(f64, Vec<f64>)> {
        if windows.is_empty() {
            return Err(Error::Model("empty batch".into()));
        }
        let n = windows.len() as f64;
        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        for w in windows {
            let (l, g) = self.loss_and_grad(w)?;
            loss += l / n;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi / n;
            }
        }
        Ok((loss, grad))
    }

    /// Per-token log-probabilities: one value for each token after the first.
    pub fn logprobs(&self, stream: &[u32]) -> Result<Vec<f64>> {
        self.check_ids(stream)?;
        let mut out = Vec::new();
        for pos in 1..stream.len() {
            let ctx = self.context_at(stream, pos);
            let (_x, _z, _a, logits) = self.forward_parts(&ctx);
            let logp = Self::log_softmax(&logits);
            out.push(logp[stream[pos] as usize]);
        }
        Ok(out)
    }

    /// exp(mean next-token cross-entropy) over a token stream.
    pub fn perplexity(&self, stream: &[u32]) -> Result<f64> {
        if stream.len() < 2 {
            return Err(Error::Model("stream must have at least 2 tokens".into()));
        }
        let lps = self.logprobs(stream)?;
        let nll: f64 = lps.iter().map(|lp| -lp).sum::<f64>() / lps.len() as f64;
        Ok(nll.exp())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: ToyLm = serde_json::from_reader(std::io::BufReader::new(file))?;
        model.config.validate()?;
        if model.theta.len() != model.config.param_count() {
            return Err(Error::Model("checkpoint parameter count mismatch".into()));
        }
        Ok(model)
    }
}
