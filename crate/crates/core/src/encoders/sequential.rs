//! Post-norm transformer encoder pooled through a prepended CLS position.

use crate::corpus::vocab::CLS;
use crate::error::{Error, Result};
use crate::nn::{multi_head_attention, AttentionProj, FeedForward, Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attn: AttentionProj,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequentialEncoder {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
    /// Linear map applied to the final CLS state.
    pub pool: Linear,
    pub n_heads: usize,
    pub max_len: usize,
    pub positional: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SequentialShape {
    pub vocab: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_pool: usize,
    pub max_len: usize,
    pub positional: bool,
}

impl SequentialEncoder {
    pub fn new(init: &mut Init, s: SequentialShape) -> Self {
        let tok_emb = init.normal("tok_emb", s.vocab, s.d_model, 0.1);
        let pos_emb = init.normal("pos_emb", s.max_len + 1, s.d_model, 0.1);
        let layers = (0..s.n_layers)
            .map(|l| {
                init.scoped(&format!("layer{l}"), |init| EncoderLayer {
                    attn: AttentionProj::new(init, s.d_model),
                    ff: FeedForward::new(init, s.d_model, s.d_ff),
                })
            })
            .collect();
        let pool = init.linear("pool", s.d_model, s.d_pool, false);
        Self { tok_emb, pos_emb, layers, pool, n_heads: s.n_heads, max_len: s.max_len, positional: s.positional }
    }

    /// Pooled `1 × d_pool` embedding of `[CLS] ++ ids`.
    pub fn forward(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        self.forward_with(tape, self.tok_emb, ids)
    }

    /// Like [`forward`](Self::forward) with a different token table sharing the
    /// same layers (used to read flattened trees through the same trunk).
    pub fn forward_with(&self, tape: &mut Tape, table: ParamId, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.max_len {
            return Err(Error::TooLong { len: ids.len(), max: self.max_len });
        }
        let vocab = tape.params().get(table).nrows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let mut seq = Vec::with_capacity(ids.len() + 1);
        seq.push(CLS.min(vocab - 1));
        seq.extend_from_slice(ids);
        let t = tape.param(table);
        let mut h = tape.gather(t, &seq);
        if self.positional {
            let p = tape.param(self.pos_emb);
            let p = tape.slice_rows(p, 0, seq.len());
            h = tape.add(h, p);
        }
        h = tape.dropout(h);
        for layer in &self.layers {
            let q = layer.attn.q.forward(tape, h);
            let k = layer.attn.k.forward(tape, h);
            let v = layer.attn.v.forward(tape, h);
            let (a, _) = multi_head_attention(tape, q, k, v, self.n_heads, None);
            let a = layer.attn.o.forward(tape, a);
            let a = tape.dropout(a);
            let r = tape.add(h, a);
            h = tape.layer_norm(r);
            let f = layer.ff.forward(tape, h);
            let f = tape.dropout(f);
            let r = tape.add(h, f);
            h = tape.layer_norm(r);
        }
        let cls = tape.slice_rows(h, 0, 1);
        Ok(self.pool.forward(tape, cls))
    }
}

/// Pooled embedding as a plain vector.
pub fn sequential_encode(enc: &SequentialEncoder, store: &ParamStore, ids: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let out = enc.forward(&mut tape, ids)?;
    Ok(tape.value(out).iter().copied().collect())
}

