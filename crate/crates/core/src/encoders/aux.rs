//! Auxiliary syntax objectives for the multi-task encoders.

use ndarray::Array2;

use super::graph::{gcn_normalize, GraphEncoder, GraphKind};
use super::latent::standard_normal;
use crate::corpus::SyntaxGraph;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// LSTM language model over flattened trees whose first hidden state is `z_syn`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmAux {
    pub emb: ParamId,
    pub gates: Linear,
    pub out: Linear,
}

impl LstmAux {
    pub fn new(init: &mut Init, tree_vocab: usize, hidden: usize) -> Self {
        let emb = init.normal("emb", tree_vocab, hidden, 0.1);
        let gates = init.linear("gates", 2 * hidden, 4 * hidden, true);
        // forget-gate bias of one
        let b = gates.b.expect("bias");
        for j in hidden..2 * hidden {
            init.store.get_mut(b)[[0, j]] = 1.0;
        }
        let out = init.linear("out", hidden, tree_vocab, true);
        Self { emb, gates, out }
    }

    /// Summed teacher-forced NLL of `ids` (framed with BOS/EOS).
    pub fn loss(&self, tape: &mut Tape, z_syn: Var, ids: &[usize]) -> Result<Var> {
        let hidden = tape.params().get(self.emb).ncols();
        if tape.shape(z_syn) != (1, hidden) {
            return Err(Error::Shape(format!("z_syn {:?} for LSTM hidden {hidden}", tape.shape(z_syn))));
        }
        if ids.len() < 2 {
            return Err(Error::Invalid("flattened tree needs framing tokens".into()));
        }
        let n = ids.len() - 1;
        let table = tape.param(self.emb);
        let x = tape.gather(table, &ids[..n]);
        let mut h = z_syn;
        let mut c = tape.constant(Array2::zeros((1, hidden)));
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let xt = tape.slice_rows(x, t, t + 1);
            let xh = tape.concat_cols(&[xt, h]);
            let g = self.gates.forward(tape, xh);
            let i = tape.slice_cols(g, 0, hidden);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(g, hidden, 2 * hidden);
            let f = tape.sigmoid(f);
            let o = tape.slice_cols(g, 2 * hidden, 3 * hidden);
            let o = tape.sigmoid(o);
            let cand = tape.slice_cols(g, 3 * hidden, 4 * hidden);
            let cand = tape.tanh(cand);
            let fc = tape.mul(f, c);
            let ic = tape.mul(i, cand);
            c = tape.add(fc, ic);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            states.push(h);
        }
        let hs = tape.concat_rows(&states);
        let logits = self.out.forward(tape, hs);
        Ok(tape.cross_entropy(logits, &ids[1..]))
    }
}

/// Plain-value form of [`LstmAux::loss`].
pub fn lstm_syntax_loss(aux: &LstmAux, store: &ParamStore, z_syn: &[f64], flat_tree_ids: &[usize]) -> Result<f64> {
    let mut tape = Tape::new(store);
    let z = tape.row(z_syn);
    let l = aux.loss(&mut tape, z, flat_tree_ids)?;
    Ok(tape.scalar(l))
}

/// Variational graph autoencoder whose pooled node means are aligned with `z_syn`.
#[derive(Clone, Debug, PartialEq)]
pub struct VgaeAux {
    pub inputs: GraphEncoder,
    pub hidden: Linear,
    pub mu: Linear,
    pub logvar: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct VgaeTerms {
    pub mse: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub total: Var,
}

/// Entry weights of the adjacency reconstruction loss.
///
/// Targets are `A + I`. Positive entries are up-weighted by
/// `(n² − #pos) / #pos` and the sum is scaled by `n² / (2 (n² − #pos))`, then
/// averaged over the `n²` entries.
pub fn vgae_targets(adjacency: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = adjacency.nrows();
    let targets = adjacency + &Array2::<f64>::eye(n);
    let total = (n * n) as f64;
    let pos = targets.sum();
    let neg = total - pos;
    let (pos_weight, norm) = if neg > 0.0 { (neg / pos, total / (2.0 * neg)) } else { (1.0, 1.0) };
    let weights = targets.mapv(|t| norm * if t > 0.0 { pos_weight } else { 1.0 } / total);
    (targets, weights)
}

impl VgaeAux {
    pub fn new(init: &mut Init, n_labels: usize, hidden: usize, d_z: usize) -> Self {
        let inputs = init.scoped("inputs", |init| GraphEncoder::new(init, GraphKind::Gcn, n_labels, hidden, 0));
        Self {
            inputs,
            hidden: init.linear("hidden", hidden, hidden, false),
            mu: init.linear("mu", hidden, d_z, false),
            logvar: Linear { w: init.normal("logvar.w", hidden, d_z, 0.01), b: None },
        }
    }

    pub fn terms(
        &self,
        tape: &mut Tape,
        z_syn: Var,
        graph: &SyntaxGraph,
        label_ids: &[usize],
        rng_seed: u64,
    ) -> Result<VgaeTerms> {
        let n = graph.node_count();
        let x = self.inputs.node_inputs(tape, graph, label_ids)?;
        let a = tape.constant(gcn_normalize(&graph.adjacency));
        let ax = tape.matmul(a, x);
        let h = self.hidden.forward(tape, ax);
        let h = tape.relu(h);
        let ah = tape.matmul(a, h);
        let mu = self.mu.forward(tape, ah);
        let logvar = self.logvar.forward(tape, ah);
        let d_z = tape.shape(mu).1;
        if tape.shape(z_syn) != (1, d_z) {
            return Err(Error::Shape(format!("z_syn {:?} against node latents of {d_z}", tape.shape(z_syn))));
        }
        let eps = Array2::from_shape_vec((n, d_z), standard_normal(n * d_z, rng_seed)).expect("shape");
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let eps = tape.constant(eps);
        let noise = tape.mul(std, eps);
        let z = tape.add(mu, noise);

        let logits = tape.matmul_nt(z, z);
        let (targets, weights) = vgae_targets(&graph.adjacency);
        let reconstruction = tape.bce_with_logits(logits, &targets, &weights);

        // (1/n²) Σ_nodes ½ Σ_d (μ² + e^lv − 1 − lv)
        let mu2 = tape.square(mu);
        let var = tape.exp(logvar);
        let s = tape.add(mu2, var);
        let s = tape.sub(s, logvar);
        let s = tape.add_scalar(s, -1.0);
        let s = tape.sum(s);
        let kl = tape.scale(s, 0.5 / (n * n) as f64);

        let pooled = tape.mean_rows(mu);
        let diff = tape.sub(pooled, z_syn);
        let sq = tape.square(diff);
        let mse = tape.sum(sq);

        let t = tape.add(mse, reconstruction);
        let total = tape.add(t, kl);
        Ok(VgaeTerms { mse, reconstruction, kl, total })
    }
}

/// Plain-value form of [`VgaeAux::terms`]: returns `(mse, reconstruction, kl, total)`.
pub fn vgae_loss(
    aux: &VgaeAux,
    store: &ParamStore,
    z_syn: &[f64],
    graph: &SyntaxGraph,
    label_ids: &[usize],
    rng_seed: u64,
) -> Result<(f64, f64, f64, f64)> {
    let mut tape = Tape::new(store);
    let z = tape.row(z_syn);
    let t = aux.terms(&mut tape, z, graph, label_ids, rng_seed)?;
    Ok((tape.scalar(t.mse), tape.scalar(t.reconstruction), tape.scalar(t.kl), tape.scalar(t.total)))
}

/// Reconstruction term for given adjacency logits (used to check limits).
pub fn vgae_reconstruction(logits: &Array2<f64>, adjacency: &Array2<f64>) -> f64 {
    let (targets, weights) = vgae_targets(adjacency);
    let mut total = 0.0;
    for ((&x, &t), &w) in logits.iter().zip(targets.iter()).zip(weights.iter()) {
        total += w * crate::tape::bce_logit(x, t);
    }
    total
}
