//! ELBO optimisation with cyclical β annealing and per-space KL floors.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::UNK;
use crate::decoder::InjectionScheme;
use crate::encoders::{DualLatent, EncoderInput, EncoderMode};
use crate::error::{Error, Result};
use crate::model::{mix, Model, ModelConfig, NoiseSeeds};
use crate::optim::Adam;
use crate::params::{Gradients, ParamStore};
use crate::par;
use crate::tape::{Tape, Var};
pub use checkpoint::{
    checkpoint_roundtrip, load_checkpoint, load_model, save_checkpoint, save_model, CheckpointManifest,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` down to zero over the whole run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = step.min(total_steps) as f64 / total_steps.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub beta_cycles: usize,
    pub ramp_proportion: f64,
    pub lambda_threshold: f64,
    pub grad_clip: f64,
    /// Activation dropout inside the transformer stacks.
    pub dropout: f64,
    /// Probability of replacing a teacher-forced decoder input with UNK.
    pub word_dropout: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            beta_cycles: 4,
            ramp_proportion: 0.5,
            lambda_threshold: 0.5,
            grad_clip: 1.0,
            dropout: 0.0,
            word_dropout: 0.0,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn d_z(&self) -> usize {
        self.model.encoder.d_z
    }

    pub fn scheme(&self) -> &InjectionScheme {
        &self.model.decoder.scheme
    }

    pub fn encoder_mode(&self) -> EncoderMode {
        self.model.encoder.mode
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lambda_threshold >= 0.0) {
            return Err(Error::Invalid(format!("lambda_threshold must be ≥ 0, got {}", self.lambda_threshold)));
        }
        if !(self.ramp_proportion > 0.0 && self.ramp_proportion <= 1.0) {
            return Err(Error::Invalid(format!("ramp_proportion must lie in (0, 1], got {}", self.ramp_proportion)));
        }
        for (name, p) in [("dropout", self.dropout), ("word_dropout", self.word_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.beta_cycles == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("beta_cycles and batch_size must be ≥ 1".into()));
        }
        self.model.encoder.validate()?;
        self.model.decoder.validate()
    }
}

/// Per-step (or per-epoch mean) loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction_nll: f64,
    pub kl_sem: f64,
    pub kl_syn: f64,
    pub syn_aux: f64,
    pub beta: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `nll + β·max(λ, kl_sem) + β·max(λ, kl_syn) + aux`.
    pub fn compose(&self) -> f64 {
        self.reconstruction_nll
            + self.beta * kl_threshold(self.kl_sem, self.lambda)
            + self.beta * kl_threshold(self.kl_syn, self.lambda)
            + self.syn_aux
    }

    fn is_finite(&self) -> bool {
        [self.reconstruction_nll, self.kl_sem, self.kl_syn, self.syn_aux, self.beta, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.reconstruction_nll += b.reconstruction_nll / n;
            m.kl_sem += b.kl_sem / n;
            m.kl_syn += b.kl_syn / n;
            m.syn_aux += b.syn_aux / n;
            m.beta += b.beta / n;
            m.total += b.total / n;
        }
        if let Some(first) = items.first() {
            m.lambda = first.lambda;
        }
        m
    }
}

/// KL(N(mu, diag e^logvar) ‖ N(0, I)).
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

pub fn kl_gaussian_tape(tape: &mut Tape, mu: Var, logvar: Var) -> Var {
    let n = tape.shape(mu).1 as f64;
    let m2 = tape.square(mu);
    let e = tape.exp(logvar);
    let s = tape.add(m2, e);
    let s = tape.sub(s, logvar);
    let s = tape.sum(s);
    let s = tape.add_scalar(s, -n);
    tape.scale(s, 0.5)
}

pub fn kl_threshold(kl: f64, lambda: f64) -> f64 {
    kl.max(lambda)
}

/// Cyclical schedule: each of `cycles` equal segments ramps β linearly from 0
/// to 1 over its first `ramp_proportion` and then holds 1. Out-of-range steps
/// are clamped.
pub fn cyclical_beta(step: usize, total_steps: usize, cycles: usize, ramp_proportion: f64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total - 1) as f64;
    let period = total as f64 / cycles.max(1) as f64;
    let pos = (step % period) / period;
    (pos / ramp_proportion).min(1.0)
}

/// Assembles the loss from plain latents. Missing syntax latents contribute a
/// zero KL.
pub fn vae_loss(latents: &DualLatent, nll: f64, aux: f64, beta: f64, lambda: f64) -> Result<LossBreakdown> {
    let kl_sem = kl_gaussian(&latents.sem.mu, &latents.sem.logvar);
    let kl_syn = latents.syn.as_ref().map_or(0.0, |s| kl_gaussian(&s.mu, &s.logvar));
    let mut b = LossBreakdown { reconstruction_nll: nll, kl_sem, kl_syn, syn_aux: aux, beta, lambda, total: 0.0 };
    b.total = b.compose();
    if !b.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {b:?}")));
    }
    Ok(b)
}

/// Per-step loss weighting and regularisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub word_dropout: f64,
}

impl LossWeights {
    pub fn new(beta: f64, lambda: f64) -> Self {
        Self { beta, lambda, dropout: 0.0, word_dropout: 0.0 }
    }
}

/// Decoder inputs for a framed target with each non-BOS position replaced by
/// UNK with probability `rate`.
pub fn drop_words(target: &[usize], rate: f64, seed: u64) -> Vec<usize> {
    let mut inputs = target[..target.len().saturating_sub(1)].to_vec();
    if rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in inputs.iter_mut().skip(1) {
            if rng.random_bool(rate) {
                *t = UNK;
            }
        }
    }
    inputs
}

/// Builds one example's total loss on `tape`.
pub fn sample_loss(
    tape: &mut Tape,
    model: &Model,
    input: &EncoderInput,
    seeds: NoiseSeeds,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let LossWeights { beta, lambda, word_dropout, .. } = weights;
    let (vars, graph) = model.encode_tape(tape, input, seeds)?;
    let latents = Model::latent_inputs(&vars, false);
    if input.ids.len() < 2 {
        return Err(Error::Invalid("target must be framed with BOS … EOS".into()));
    }
    let inputs = drop_words(&input.ids, word_dropout, mix(seeds.eps, 11));
    let (_, nll) = model.decoder.teacher_forced_with(tape, &inputs, &input.ids[1..], &latents)?;
    let aux = model.encoder.aux_loss(tape, input, &vars, graph.as_ref(), mix(seeds.graph, 3))?;
    let kl_sem = kl_gaussian_tape(tape, vars.sem.mu, vars.sem.logvar);
    let floored = tape.max_scalar(kl_sem, lambda);
    let term = tape.scale(floored, beta);
    let mut total = tape.add(nll, term);
    let kl_syn = vars.syn.map(|s| kl_gaussian_tape(tape, s.mu, s.logvar));
    match kl_syn {
        Some(k) => {
            let floored = tape.max_scalar(k, lambda);
            let term = tape.scale(floored, beta);
            total = tape.add(total, term);
        }
        None => total = tape.add_scalar(total, beta * lambda),
    }
    if let Some(a) = aux {
        total = tape.add(total, a);
    }
    let b = LossBreakdown {
        reconstruction_nll: tape.scalar(nll),
        kl_sem: tape.scalar(kl_sem),
        kl_syn: kl_syn.map_or(0.0, |k| tape.scalar(k)),
        syn_aux: aux.map_or(0.0, |a| tape.scalar(a)),
        beta,
        lambda,
        total: tape.scalar(total),
    };
    if !b.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {b:?}")));
    }
    Ok((total, b))
}

/// Loss breakdown and parameter gradients for one example.
pub fn sample_gradients(
    model: &Model,
    input: &EncoderInput,
    seeds: NoiseSeeds,
    weights: LossWeights,
) -> Result<(Gradients, LossBreakdown)> {
    let mut tape = Tape::with_dropout(&model.store, weights.dropout, mix(seeds.eps, 13));
    let (total, b) = sample_loss(&mut tape, model, input, seeds, weights)?;
    Ok((tape.backward(total), b))
}

/// Mean gradient over a batch. Per-example work runs through [`par::map`] and
/// is reduced in input order, so results do not depend on the thread count.
pub fn batch_gradients(
    model: &Model,
    batch: &[(&EncoderInput, NoiseSeeds)],
    weights: LossWeights,
    parallel: bool,
) -> Result<(Gradients, Vec<LossBreakdown>)> {
    let work = |_: usize, (input, seeds): &(&EncoderInput, NoiseSeeds)| sample_gradients(model, input, *seeds, weights);
    let results = if parallel { par::map(batch, work) } else { par::map_sequential(batch, work) };
    let mut grads = Gradients::zeros_like(&model.store);
    let mut parts = Vec::with_capacity(batch.len());
    for r in results {
        let (g, b) = r?;
        grads.merge(&g);
        parts.push(b);
    }
    grads.scale(1.0 / batch.len().max(1) as f64);
    Ok((grads, parts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

/// Owns the model and optimiser state across steps.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    adam: Adam,
    step: u64,
    total_steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: Model, n_examples: usize) -> Result<Self> {
        config.validate()?;
        let per_epoch = n_examples.div_ceil(config.batch_size).max(1);
        let adam = Adam::new(&model.store, config.learning_rate);
        Ok(Self { total_steps: per_epoch * config.epochs.max(1), config, model, adam, step: 0 })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn beta(&self) -> f64 {
        cyclical_beta(self.step as usize, self.total_steps, self.config.beta_cycles, self.config.ramp_proportion)
    }

    /// One optimiser update on `batch`. Returns the per-example terms and the
    /// pre-clip gradient norm. Parameters are untouched when any term or
    /// gradient is non-finite.
    pub fn train_step(&mut self, batch: &[(&EncoderInput, NoiseSeeds)]) -> Result<(Vec<LossBreakdown>, f64)> {
        let weights = LossWeights {
            beta: self.beta(),
            lambda: self.config.lambda_threshold,
            dropout: self.config.dropout,
            word_dropout: self.config.word_dropout,
        };
        let (mut grads, parts) = batch_gradients(&self.model, batch, weights, true)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        let norm = grads.clip_global_norm(self.config.grad_clip);
        self.adam.lr = self.config.lr_schedule.rate(self.config.learning_rate, self.step as usize, self.total_steps);
        self.adam.step(&mut self.model.store, &grads);
        self.step += 1;
        Ok((parts, norm))
    }

    /// One pass over `inputs` in a seeded shuffled order.
    pub fn train_epoch(&mut self, epoch: usize, inputs: &[EncoderInput]) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let epoch_seed = mix(self.config.seed, epoch as u64 + 1);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut parts = Vec::with_capacity(inputs.len());
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<(&EncoderInput, NoiseSeeds)> =
                chunk.iter().map(|&i| (&inputs[i], NoiseSeeds::new(mix(epoch_seed, i as u64)))).collect();
            let (p, norm) = self.train_step(&batch)?;
            parts.extend(p);
            norm_sum += norm;
            batches += 1;
        }
        Ok(EpochLog {
            epoch,
            step: self.step,
            loss: LossBreakdown::mean(&parts),
            grad_norm: norm_sum / batches.max(1) as f64,
        })
    }
}

/// Result of [`train_loop`]. On divergence `model` holds the parameters from
/// the last completed epoch and `diverged` the diagnostic.
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub diverged: Option<String>,
}

/// Trains for `config.epochs` epochs. `on_epoch` sees every epoch log with the
/// current model and whether it is the best (lowest mean total) so far.
pub fn train_loop(
    config: &TrainConfig,
    model: Model,
    inputs: &[EncoderInput],
    mut on_epoch: impl FnMut(&EpochLog, &Model, bool) -> Result<()>,
) -> Result<TrainOutcome> {
    if inputs.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    let mut trainer = Trainer::new(config.clone(), model, inputs.len())?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut last_good: ParamStore = trainer.model.store.clone();
    for epoch in 0..config.epochs {
        match trainer.train_epoch(epoch, inputs) {
            Ok(entry) => {
                let is_best = best.is_none_or(|(_, t)| entry.loss.total < t);
                if is_best {
                    best = Some((epoch, entry.loss.total));
                }
                on_epoch(&entry, &trainer.model, is_best)?;
                last_good = trainer.model.store.clone();
                log.push(entry);
            }
            Err(Error::NonFinite(msg)) => {
                trainer.model.store = last_good;
                return Ok(TrainOutcome {
                    model: trainer.model,
                    log,
                    best_epoch: best.map(|b| b.0),
                    diverged: Some(format!("epoch {epoch}: non-finite {msg}")),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome { model: trainer.model, log, best_epoch: best.map(|b| b.0), diverged: None })
}
