//! Gaussian latent heads with reparameterised sampling.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{Init, Linear};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Posterior parameters and one sample, as plain vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub sample: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Tape handles of a latent.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
    pub sample: Var,
}

impl LatentVars {
    pub fn read(&self, tape: &Tape) -> LatentGaussian {
        let v = |x: Var| tape.value(x).iter().copied().collect();
        LatentGaussian { mu: v(self.mu), logvar: v(self.logvar), sample: v(self.sample) }
    }
}

pub fn standard_normal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `mu = e W_mu`, `logvar = e W_sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentHead {
    pub mu: Linear,
    pub logvar: Linear,
}

impl LatentHead {
    pub fn new(init: &mut Init, d_in: usize, d_z: usize) -> Self {
        let mu = init.linear("mu", d_in, d_z, false);
        // start with small posterior variances
        let logvar = Linear { w: init.normal("logvar.w", d_in, d_z, 0.01), b: None };
        Self { mu, logvar }
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.get(self.mu.w).ncols()
    }

    /// Reparameterised sample `mu + exp(logvar / 2) ⊙ eps`.
    pub fn forward(&self, tape: &mut Tape, e: Var, eps: &[f64]) -> LatentVars {
        let mu = self.mu.forward(tape, e);
        let logvar = self.logvar.forward(tape, e);
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let eps = Array2::from_shape_vec((1, eps.len()), eps.to_vec()).expect("row");
        let eps = tape.constant(eps);
        let noise = tape.mul(std, eps);
        let sample = tape.add(mu, noise);
        LatentVars { mu, logvar, sample }
    }
}

/// Plain-vector form of [`LatentHead::forward`] with noise drawn from `rng_seed`.
pub fn latent_head(head: &LatentHead, store: &ParamStore, embedding: &[f64], rng_seed: u64) -> LatentGaussian {
    let eps = standard_normal(head.dim(store), rng_seed);
    latent_head_with_noise(head, store, embedding, &eps)
}

pub fn latent_head_with_noise(head: &LatentHead, store: &ParamStore, embedding: &[f64], eps: &[f64]) -> LatentGaussian {
    let mut tape = Tape::new(store);
    let e = tape.row(embedding);
    head.forward(&mut tape, e, eps).read(&tape)
}
