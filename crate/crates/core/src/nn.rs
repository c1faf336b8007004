//! Shared layers: linear maps, feed-forward blocks and multi-head attention.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::params::{init_normal, init_xavier, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Registers parameters under a common name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Init<'_>) -> T) -> T {
        let prefix = format!("{}{name}.", self.prefix);
        let mut inner = Init { store: &mut *self.store, rng: &mut *self.rng, prefix };
        f(&mut inner)
    }

    fn full(&self, name: &str) -> String {
        format!("{}{name}", self.prefix)
    }

    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let v = init_xavier(self.rng, fan_in, fan_out);
        self.store.insert(self.full(name), v)
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let v = init_normal(self.rng, rows, cols, std);
        self.store.insert(self.full(name), v)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.insert(self.full(name), Array2::zeros((rows, cols)))
    }

    pub fn value(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        self.store.insert(self.full(name), value)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let w = self.xavier(&format!("{name}.w"), fan_in, fan_out);
        let b = bias.then(|| self.zeros(&format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }
}

/// `x W + b` on row-major activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, d_model: usize, d_ff: usize) -> Self {
        Self { up: init.linear("ff_up", d_model, d_ff, true), down: init.linear("ff_down", d_ff, d_model, true) }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(tape, x);
        let h = tape.relu(h);
        self.down.forward(tape, h)
    }
}

/// Query/key/value/output projections of one self-attention layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionProj {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionProj {
    pub fn new(init: &mut Init, d_model: usize) -> Self {
        Self {
            q: init.linear("wq", d_model, d_model, false),
            k: init.linear("wk", d_model, d_model, false),
            v: init.linear("wv", d_model, d_model, false),
            o: init.linear("wo", d_model, d_model, false),
        }
    }
}

/// Additive mask: `0` where a query may attend, `-inf` elsewhere. With
/// `memory` the first key column is a latent slot visible to every query.
pub fn causal_mask(seq: usize, memory: bool) -> Array2<f64> {
    let off = usize::from(memory);
    Array2::from_shape_fn((seq, seq + off), |(i, j)| {
        if j < off || j - off <= i {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// Scaled dot-product attention split into `n_heads` column blocks.
///
/// `q` is `seq_q × d`, `k` and `v` are `seq_k × d`. Returns the concatenated
/// head outputs (`seq_q × d`) and the post-softmax weights of each head.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    mask: Option<&Array2<f64>>,
) -> (Var, Vec<Var>) {
    let d = tape.shape(q).1;
    assert_eq!(d % n_heads, 0, "d_model must divide into heads");
    let d_head = d / n_heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, lo, hi), tape.slice_cols(k, lo, hi), tape.slice_cols(v, lo, hi))
        };
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => tape.add_const(scores, m),
            None => scores,
        };
        let w = tape.softmax(scores);
        outs.push(tape.matmul(w, vh));
        weights.push(w);
    }
    let out = if n_heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    (out, weights)
}
