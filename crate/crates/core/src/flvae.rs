//! Variational autoencoder with residual encoder/decoder stacks, a Gaussian
//! latent and sigmoid outputs, trained on the focal-loss ELBO with
//! split-input augmentation.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataio::{augment_split, InteractionMatrix};
use crate::error::{dim_err, Error, Result};
use crate::nncore::{
    join_name, loss_focal, sigmoid, Adam, Dense, FocalConfig, LayerInput, Loss, Parameterized, ResidualStack,
    StackCache,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::train::{check_finite, dense_rows, epoch_batches, Schedule, TrainReport};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// When to insert per-layer normalization into the residual stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// On for stacks of depth 3 or more.
    Auto,
    On,
    Off,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::On => "on",
            Self::Off => "off",
        }
    }

    pub fn enabled(self, depth: usize) -> bool {
        match self {
            Self::Auto => depth >= 3,
            Self::On => true,
            Self::Off => false,
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            other => Err(Error::Config(format!("unknown norm mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlvaeConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub norm: NormMode,
    pub focal: FocalConfig,
    pub kl_weight: f64,
}

impl FlvaeConfig {
    /// 2048 latent units, 4096 hidden units, 7 encoder and 5 decoder layers.
    pub fn full_scale() -> Self {
        Self {
            latent_dim: 2048,
            hidden_dim: 4096,
            encoder_depth: 7,
            decoder_depth: 5,
            norm: NormMode::Auto,
            focal: FocalConfig::default(),
            kl_weight: 1.0,
        }
    }

    pub fn desk() -> Self {
        Self { latent_dim: 64, hidden_dim: 128, encoder_depth: 2, decoder_depth: 1, ..Self::full_scale() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("latent and hidden dimensions must be >= 1".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight must be >= 0, got {}", self.kl_weight)));
        }
        self.focal.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlvaeModel {
    pub encoder: ResidualStack,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: ResidualStack,
    pub output_head: Dense,
    pub cfg: FlvaeConfig,
}

/// A reparameterized latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Array1<f64>,
    pub logvar: Array1<f64>,
    pub z: Array1<f64>,
}

/// Forward-pass intermediates for one training batch.
#[derive(Debug, Clone)]
pub struct FlvaeCache {
    encoder: StackCache,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    logvar_raw: Array2<f64>,
    eps: Array2<f64>,
    z: Array2<f64>,
    decoder: StackCache,
    pub probs: Array2<f64>,
}

/// `0.5 * sum(mu^2 + exp(logvar) - logvar - 1)`.
pub fn kl_standard_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(dim_err("logvar length", mu.len(), logvar.len()));
    }
    Ok(0.5 * mu.iter().zip(logvar).map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0).sum::<f64>())
}

/// `z = mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Result<LatentSample> {
    if mu.len() != logvar.len() {
        return Err(dim_err("logvar length", mu.len(), logvar.len()));
    }
    let z = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let e: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * e
        })
        .collect();
    Ok(LatentSample { mu: Array1::from(mu.to_vec()), logvar: Array1::from(logvar.to_vec()), z })
}

/// Focal reconstruction loss plus `beta` times the KL term.
pub fn flvae_loss(
    probs: &[f64],
    target: &[f64],
    mu: &[f64],
    logvar: &[f64],
    focal: &FocalConfig,
    beta: f64,
) -> Result<f64> {
    Ok(loss_focal(probs, target, focal)? + beta * kl_standard_gaussian(mu, logvar)?)
}

impl FlvaeModel {
    pub fn new<R: Rng + ?Sized>(n_items: usize, cfg: FlvaeConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if n_items == 0 {
            return Err(Error::Config("item count must be positive".into()));
        }
        let (h, k) = (cfg.hidden_dim, cfg.latent_dim);
        Ok(Self {
            encoder: ResidualStack::new(n_items, h, cfg.encoder_depth, cfg.norm.enabled(cfg.encoder_depth), rng),
            mu_head: Dense::glorot(h, k, rng),
            logvar_head: Dense::glorot(h, k, rng),
            decoder: ResidualStack::new(k, h, cfg.decoder_depth, cfg.norm.enabled(cfg.decoder_depth), rng),
            output_head: Dense::glorot(h, n_items, rng),
            cfg,
        })
    }

    pub fn n_items(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    /// Checks every tensor shape against the stored configuration.
    pub fn validate(&self) -> Result<()> {
        let (i, h, k) = (self.n_items(), self.cfg.hidden_dim, self.cfg.latent_dim);
        self.encoder.projection.check_shape("encoder projection", i, h)?;
        self.encoder.validate()?;
        self.mu_head.check_shape("mu head", h, k)?;
        self.logvar_head.check_shape("logvar head", h, k)?;
        self.decoder.projection.check_shape("decoder projection", k, h)?;
        self.decoder.validate()?;
        self.output_head.check_shape("output head", h, i)?;
        if self.encoder.depth() != self.cfg.encoder_depth || self.decoder.depth() != self.cfg.decoder_depth {
            return Err(Error::Dimension("stack depth differs from configuration".into()));
        }
        Ok(())
    }

    fn heads(&self, enc_out: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mu = self.mu_head.forward(LayerInput::Dense(enc_out));
        let raw = self.logvar_head.forward(LayerInput::Dense(enc_out));
        let logvar = raw.mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        (mu, logvar, raw)
    }

    /// Posterior mean and (clamped) log-variance for a batch.
    pub fn encode_batch(&self, input: LayerInput<'_>) -> (Array2<f64>, Array2<f64>) {
        let h = self.encoder.apply(input);
        let (mu, logvar, _) = self.heads(h.view());
        (mu, logvar)
    }

    /// Output probabilities for a batch of latent codes.
    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let h = self.decoder.apply(LayerInput::Dense(z));
        self.output_head.forward(LayerInput::Dense(h.view())).mapv_into(sigmoid)
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
        if x.len() != self.n_items() {
            return Err(dim_err("FLVAE input", self.n_items(), x.len()));
        }
        let xb = ndarray::aview1(x).insert_axis(ndarray::Axis(0));
        let (mu, logvar) = self.encode_batch(LayerInput::Dense(xb));
        Ok((mu.row(0).to_owned(), logvar.row(0).to_owned()))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Array1<f64>> {
        if z.len() != self.latent_dim() {
            return Err(dim_err("FLVAE latent", self.latent_dim(), z.len()));
        }
        let zb = ndarray::aview1(z).insert_axis(ndarray::Axis(0));
        Ok(self.decode_batch(zb).row(0).to_owned())
    }

    /// Deterministic inference: decode the posterior mean.
    pub fn predict(&self, x: &[f64]) -> Result<Array1<f64>> {
        let (mu, _) = self.encode(x)?;
        self.decode(mu.as_slice().expect("contiguous"))
    }

    pub fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        let (mu, _) = self.encode_batch(LayerInput::Sparse { rows, width: self.n_items() });
        self.decode_batch(mu.view())
    }

    /// Training forward pass with externally supplied noise `eps` (batch x k).
    pub fn forward_train(&self, input: LayerInput<'_>, eps: Array2<f64>) -> FlvaeCache {
        let encoder = self.encoder.forward(input);
        let (mu, logvar, logvar_raw) = self.heads(encoder.output().view());
        let z = &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * &eps);
        let decoder = self.decoder.forward(LayerInput::Dense(z.view()));
        let probs = self.output_head.forward(LayerInput::Dense(decoder.output().view())).mapv_into(sigmoid);
        FlvaeCache { encoder, mu, logvar, logvar_raw, eps, z, decoder, probs }
    }

    /// Mean KL over the batch rows.
    pub fn batch_kl(cache: &FlvaeCache) -> f64 {
        let b = cache.mu.nrows().max(1) as f64;
        Zip::from(&cache.mu).and(&cache.logvar).fold(0.0, |acc, &m, &lv| acc + 0.5 * (m * m + lv.exp() - lv - 1.0)) / b
    }

    /// Gradients of `R(probs) + beta * mean KL` given `dR/dprobs`.
    pub fn backward(
        &self,
        input: LayerInput<'_>,
        cache: &FlvaeCache,
        grad_probs: &Array2<f64>,
        beta: f64,
    ) -> FlvaeModel {
        let b = cache.mu.nrows().max(1) as f64;
        let grad_logits = Zip::from(grad_probs).and(&cache.probs).map_collect(|&g, &p| g * p * (1.0 - p));
        let (g_out, g_dec_out) =
            self.output_head.backward(LayerInput::Dense(cache.decoder.output().view()), grad_logits.view());
        let (g_dec, g_z) = self.decoder.backward(
            LayerInput::Dense(cache.z.view()),
            &cache.decoder,
            g_dec_out.expect("dense input").view(),
        );
        let g_z = g_z.expect("dense input");

        let g_mu = &g_z + &(&cache.mu * (beta / b));
        let mut g_lv = Array2::zeros(cache.logvar.raw_dim());
        Zip::from(&mut g_lv).and(&g_z).and(&cache.eps).and(&cache.logvar).and(&cache.logvar_raw).for_each(
            |g, &gz, &e, &lv, &raw| {
                *g = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                    gz * e * 0.5 * (0.5 * lv).exp() + beta / b * 0.5 * (lv.exp() - 1.0)
                } else {
                    0.0
                };
            },
        );

        let enc_out = cache.encoder.output().view();
        let (g_muh, g_enc_a) = self.mu_head.backward(LayerInput::Dense(enc_out), g_mu.view());
        let (g_lvh, g_enc_b) = self.logvar_head.backward(LayerInput::Dense(enc_out), g_lv.view());
        let g_enc = g_enc_a.expect("dense") + &g_enc_b.expect("dense");
        let (g_encoder, _) = self.encoder.backward(input, &cache.encoder, g_enc.view());

        FlvaeModel {
            encoder: g_encoder,
            mu_head: g_muh,
            logvar_head: g_lvh,
            decoder: g_dec,
            output_head: g_out,
            cfg: self.cfg,
        }
    }

    /// Batch loss `mean(focal + beta * KL)` and its gradient.
    pub fn loss_and_grad(
        &self,
        input: LayerInput<'_>,
        target: &Array2<f64>,
        eps: Array2<f64>,
        beta: f64,
    ) -> (f64, FlvaeModel) {
        let cache = self.forward_train(input, eps);
        let (rec, g_p) = Loss::Focal(self.cfg.focal).batch_value_and_grad(cache.probs.view(), target.view());
        let loss = rec + beta * Self::batch_kl(&cache);
        (loss, self.backward(input, &cache, &g_p, beta))
    }
}

impl Parameterized for FlvaeModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.encoder.collect_params(&join_name(prefix, "encoder"), out);
        self.mu_head.collect_params(&join_name(prefix, "mu"), out);
        self.logvar_head.collect_params(&join_name(prefix, "logvar"), out);
        self.decoder.collect_params(&join_name(prefix, "decoder"), out);
        self.output_head.collect_params(&join_name(prefix, "output"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.encoder.collect_params_mut(&join_name(prefix, "encoder"), out);
        self.mu_head.collect_params_mut(&join_name(prefix, "mu"), out);
        self.logvar_head.collect_params_mut(&join_name(prefix, "logvar"), out);
        self.decoder.collect_params_mut(&join_name(prefix, "decoder"), out);
        self.output_head.collect_params_mut(&join_name(prefix, "output"), out);
    }
}

/// Training settings shared by FLVAE and the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderTrainConfig {
    pub schedule: Schedule,
    /// Linear KL warm-up from 0 to the full weight over this many epochs;
    /// `None` or `Some(0)` keeps the weight constant.
    pub kl_anneal_epochs: Option<usize>,
    /// Train on random halves (A -> B, then B -> A) instead of full rows.
    pub augment: bool,
}

impl AutoencoderTrainConfig {
    pub fn new(schedule: Schedule) -> Self {
        let first = schedule.phases.first().map_or(0, |p| p.epochs);
        Self { schedule, kl_anneal_epochs: Some(first), augment: true }
    }

    pub fn kl_factor(&self, epoch: usize) -> f64 {
        match self.kl_anneal_epochs {
            Some(n) if n > 0 => (epoch as f64 / n as f64).min(1.0),
            _ => 1.0,
        }
    }
}

/// One optimizer step's worth of training pairs.
pub(crate) struct StepPairs<'a> {
    pub inputs: Vec<&'a [u32]>,
    pub targets: Vec<&'a [u32]>,
}

/// Training users, and for one batch the two steps (A -> B, B -> A) or two
/// full-row steps without augmentation.
pub(crate) struct PairPlan {
    pub users: Vec<usize>,
    augment: bool,
}

impl PairPlan {
    pub fn new(train: &InteractionMatrix, augment: bool) -> Result<Self> {
        let min_len = if augment { 2 } else { 1 };
        let users: Vec<usize> = (0..train.n_users()).filter(|&u| train.row(u).len() >= min_len).collect();
        if users.is_empty() {
            return Err(Error::EmptyDataset(format!("no training row with >= {min_len} interactions")));
        }
        let dropped = train.n_users() - users.len();
        if dropped > 0 {
            log::warn!("{dropped} training rows too short for autoencoder epochs; skipped");
        }
        Ok(Self { users, augment })
    }

    pub fn splits(
        &self,
        train: &InteractionMatrix,
        batch: &[usize],
        seed: u64,
        epoch: usize,
    ) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
        batch
            .iter()
            .map(|&u| {
                if self.augment {
                    let p = augment_split(train.row(u), derive_seed(seed, &[0xa9, epoch as u64, u as u64]))?;
                    Ok((p.x_a, p.x_b))
                } else {
                    Ok((train.row(u).to_vec(), train.row(u).to_vec()))
                }
            })
            .collect()
    }

    pub fn step_pairs<'a>(splits: &'a [(Vec<u32>, Vec<u32>)], direction: usize) -> StepPairs<'a> {
        let (inputs, targets) = splits
            .iter()
            .map(|(a, b)| if direction == 0 { (a.as_slice(), b.as_slice()) } else { (b.as_slice(), a.as_slice()) })
            .unzip();
        StepPairs { inputs, targets }
    }
}

/// Seeded matrix of independent standard normal draws.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn flvae_train(
    model: &mut FlvaeModel,
    train: &InteractionMatrix,
    cfg: &AutoencoderTrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    flvae_train_with(model, train, cfg, seed, &mut Adam::new())
}

pub(crate) fn flvae_train_with(
    model: &mut FlvaeModel,
    train: &InteractionMatrix,
    cfg: &AutoencoderTrainConfig,
    seed: u64,
    opt: &mut Adam,
) -> Result<TrainReport> {
    if train.n_items() != model.n_items() {
        return Err(dim_err("FLVAE item count vs training data", model.n_items(), train.n_items()));
    }
    cfg.schedule.validate()?;
    let plan = PairPlan::new(train, cfg.augment)?;
    let n_items = model.n_items();
    let k = model.latent_dim();
    let mut trace = Vec::with_capacity(cfg.schedule.total_epochs());
    for (epoch, lr) in cfg.schedule.epoch_rates().enumerate() {
        let beta = model.cfg.kl_weight * cfg.kl_factor(epoch);
        let batches = epoch_batches(&plan.users, cfg.schedule.batch_size, seed, epoch);
        let mut total = 0.0;
        let mut steps = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let splits = plan.splits(train, batch, seed, epoch)?;
            for direction in 0..2 {
                let pairs = PairPlan::step_pairs(&splits, direction);
                let input = LayerInput::Sparse { rows: &pairs.inputs, width: n_items };
                let target = dense_rows(&pairs.targets, n_items);
                let eps = standard_normal(
                    batch.len(),
                    k,
                    derive_seed(seed, &[0xe5, epoch as u64, bi as u64, direction as u64]),
                );
                let (loss, grad) = model.loss_and_grad(input, &target, eps, beta);
                check_finite(loss, "FLVAE", epoch)?;
                opt.step(model, &grad, lr)?;
                total += loss;
                steps += 1;
            }
        }
        let mean = total / steps as f64;
        log::debug!("flvae epoch {epoch}: loss {mean:.6} (beta {beta:.4})");
        trace.push(mean);
    }
    Ok(TrainReport { trace, optimizers: vec![("deep".into(), opt.clone())] })
}
