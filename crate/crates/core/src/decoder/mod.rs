//! Pre-norm autoregressive transformer decoder conditioned on the latents.

pub mod inject;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS, EOS};
use crate::encoders::DualLatent;
use crate::error::{Error, Result};
use crate::nn::{AttentionProj, FeedForward, Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
pub use inject::{
    addition_inject, fusion_inject, injected_attention, memory_inject, AttentionState, InjectionScheme, KvOp,
    LatentInputs, LatentSpace, LayerInjection, QOp,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub scheme: InjectionScheme,
    /// Inject only into the first `k` layers; all layers when absent.
    pub inject_layers: Option<usize>,
    /// Score tokens against the input embedding table instead of a separate
    /// output matrix.
    pub tie_output: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_head: 16,
            d_ff: 128,
            max_len: 64,
            scheme: InjectionScheme::memory(),
            inject_layers: None,
            tie_output: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::Invalid(format!(
                "n_heads × d_head = {} must equal d_model = {}",
                self.n_heads * self.d_head,
                self.d_model
            )));
        }
        self.scheme.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer {
    pub attn: AttentionProj,
    pub ff: FeedForward,
    pub inject: LayerInjection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub out: OutputLayer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputLayer {
    Linear(Linear),
    /// `h Eᵀ + b` with `E` the token table.
    Tied { bias: ParamId },
}

/// Logits plus the post-softmax attention weights `[layer][head]`.
pub struct DecoderOutput {
    pub logits: Var,
    pub attention: Vec<Vec<Var>>,
}

impl Decoder {
    /// `dz_sem`/`dz_syn` are the latent widths; a scheme that needs an absent
    /// latent is rejected here.
    ///
    /// `shared_table` reuses an existing `vocab × d_model` token table.
    pub fn new(
        init: &mut Init,
        config: &DecoderConfig,
        vocab: usize,
        dz_sem: usize,
        dz_syn: Option<usize>,
        shared_table: Option<ParamId>,
    ) -> Result<Self> {
        config.validate()?;
        let scheme = &config.scheme;
        let dim = |space: LatentSpace| -> Result<usize> {
            match space {
                LatentSpace::Sem => Ok(dz_sem),
                LatentSpace::Syn => dz_syn.ok_or_else(|| Error::Missing(format!("syntactic latent required by {scheme}"))),
            }
        };
        let dz_q = if scheme.q_op != QOp::None { dim(scheme.q_latent)? } else { 0 };
        let dz_kv = if scheme.kv_op != KvOp::None { dim(scheme.kv_latent)? } else { 0 };
        let d = config.d_model;
        let tok_emb = match shared_table {
            Some(id) => id,
            None => init.normal("tok_emb", vocab, d, 0.1),
        };
        let pos_emb = init.normal("pos_emb", config.max_len, d, 0.1);
        let n_inject = config.inject_layers.unwrap_or(config.n_layers);
        let layers = (0..config.n_layers)
            .map(|l| {
                init.scoped(&format!("layer{l}"), |init| DecoderLayer {
                    attn: AttentionProj::new(init, d),
                    ff: FeedForward::new(init, d, config.d_ff),
                    inject: if l < n_inject {
                        init.scoped("inject", |init| LayerInjection::new(init, scheme, d, dz_q, dz_kv))
                    } else {
                        LayerInjection::default()
                    },
                })
            })
            .collect();
        let out = if config.tie_output {
            OutputLayer::Tied { bias: init.zeros("out.b", 1, vocab) }
        } else {
            OutputLayer::Linear(init.linear("out", d, vocab, true))
        };
        Ok(Self { config: config.clone(), tok_emb, pos_emb, layers, out })
    }

    /// Runs the causal stack over `ids` (starting with BOS).
    pub fn forward(&self, tape: &mut Tape, ids: &[usize], latents: &LatentInputs) -> Result<DecoderOutput> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Invalid("decoder input is empty".into()));
        }
        if n > self.config.max_len {
            return Err(Error::TooLong { len: n, max: self.config.max_len });
        }
        let vocab = tape.params().get(self.tok_emb).nrows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let table = tape.param(self.tok_emb);
        let x = tape.gather(table, ids);
        let pos = tape.param(self.pos_emb);
        let pos = tape.slice_rows(pos, 0, n);
        let x = tape.add(x, pos);
        let mut x = tape.dropout(x);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = tape.layer_norm(x);
            let q = layer.attn.q.forward(tape, h);
            let k = layer.attn.k.forward(tape, h);
            let v = layer.attn.v.forward(tape, h);
            let (a, w) = inject::injected_attention_tape(
                tape,
                q,
                k,
                v,
                latents,
                &self.config.scheme,
                &layer.inject,
                self.config.n_heads,
            )?;
            let a = layer.attn.o.forward(tape, a);
            let a = tape.dropout(a);
            x = tape.add(x, a);
            let h = tape.layer_norm(x);
            let f = layer.ff.forward(tape, h);
            let f = tape.dropout(f);
            x = tape.add(x, f);
            attention.push(w);
        }
        let h = tape.layer_norm(x);
        let logits = match self.out {
            OutputLayer::Linear(l) => l.forward(tape, h),
            OutputLayer::Tied { bias } => {
                let e = tape.param(self.tok_emb);
                let l = tape.matmul_nt(h, e);
                let b = tape.param(bias);
                tape.add_row(l, b)
            }
        };
        Ok(DecoderOutput { logits, attention })
    }

    /// Teacher-forced pass over a BOS/EOS-framed target. Returns logits and the
    /// summed token NLL.
    pub fn teacher_forced(&self, tape: &mut Tape, target: &[usize], latents: &LatentInputs) -> Result<(Var, Var)> {
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::Invalid("target must be framed with BOS … EOS".into()));
        }
        self.teacher_forced_with(tape, &target[..target.len() - 1], &target[1..], latents)
    }

    /// Teacher-forced pass on explicit (possibly corrupted) inputs, scored
    /// against `targets` of the same length.
    pub fn teacher_forced_with(
        &self,
        tape: &mut Tape,
        inputs: &[usize],
        targets: &[usize],
        latents: &LatentInputs,
    ) -> Result<(Var, Var)> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        let out = self.forward(tape, inputs, latents)?;
        let nll = tape.cross_entropy(out.logits, targets);
        Ok((out.logits, nll))
    }
}

fn latent_rows(tape: &mut Tape, latents: &DualLatent) -> LatentInputs {
    LatentInputs {
        sem: Some(tape.row(&latents.sem.sample)),
        syn: latents.syn.as_ref().map(|s| tape.row(&s.sample)),
    }
}

/// Teacher-forced logits and summed NLL, conditioning on the latents' samples.
pub fn decode_teacher_forced(
    dec: &Decoder,
    store: &ParamStore,
    target: &[usize],
    latents: &DualLatent,
) -> Result<(Array2<f64>, f64)> {
    let mut tape = Tape::new(store);
    let lat = latent_rows(&mut tape, latents);
    let (logits, nll) = dec.teacher_forced(&mut tape, target, &lat)?;
    Ok((tape.value(logits).clone(), tape.scalar(nll)))
}

/// First index of the maximum; ties go to the lowest id.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from BOS driven by `next_logits(prefix)`; stops at EOS or
/// after `max_len` tokens. The returned tokens exclude BOS and EOS.
pub fn greedy_decode(max_len: usize, mut next_logits: impl FnMut(&[usize]) -> Result<Vec<f64>>) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let logits = next_logits(&prefix)?;
        let next = argmax(&logits);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

/// Greedy decoding from the decoder; `max_len` is capped by the positional table.
pub fn generate_greedy(dec: &Decoder, store: &ParamStore, latents: &DualLatent, max_len: usize) -> Result<Vec<usize>> {
    let cap = max_len.min(dec.config.max_len - 1);
    greedy_decode(cap, |prefix| {
        let mut tape = Tape::new(store);
        let lat = latent_rows(&mut tape, latents);
        let out = dec.forward(&mut tape, prefix, &lat)?;
        let logits = tape.value(out.logits);
        Ok(logits.row(logits.nrows() - 1).to_vec())
    })
}

/// Post-softmax attention weights `[layer][head]` for a teacher-forced pass
/// over `ids` (BOS-led). Under a memory slot column 0 is the latent.
pub fn attention_heatmap(
    dec: &Decoder,
    store: &ParamStore,
    ids: &[usize],
    latents: &DualLatent,
) -> Result<Vec<Vec<Array2<f64>>>> {
    let mut tape = Tape::new(store);
    let lat = latent_rows(&mut tape, latents);
    let out = dec.forward(&mut tape, ids, &lat)?;
    Ok(out.attention.iter().map(|layer| layer.iter().map(|&w| tape.value(w).clone()).collect()).collect())
}

/// CSV with a header of column labels followed by one line per query row.
pub fn heatmap_to_csv(weights: &Array2<f64>, columns: &[String]) -> Result<String> {
    if columns.len() != weights.ncols() {
        return Err(Error::Shape(format!("{} labels for {} columns", columns.len(), weights.ncols())));
    }
    let mut s = columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in weights.outer_iter() {
        s.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    Ok(s)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Inverse of [`heatmap_to_csv`].
pub fn heatmap_from_csv(text: &str) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = text.lines();
    let header = split_csv_line(lines.next().ok_or_else(|| Error::Invalid("empty heatmap file".into()))?);
    let mut values = Vec::new();
    let mut rows = 0;
    for line in lines.filter(|l| !l.is_empty()) {
        let fields = split_csv_line(line);
        if fields.len() != header.len() {
            return Err(Error::Invalid(format!("row {rows} has {} fields, header has {}", fields.len(), header.len())));
        }
        for f in fields {
            values.push(f.parse::<f64>().map_err(|e| Error::Invalid(format!("bad weight {f:?}: {e}")))?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, header.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((header, m))
}
