//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so building a tape per
//! training example is cheap. Vectors are represented as `1 × n` rows.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Gradients, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    LayerNorm(Var, Array2<f64>),
    CrossEntropy(Var, Vec<usize>, Array2<f64>),
    BceLogits(Var, Array2<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumAll(Var),
    Gather(Var, Vec<usize>),
    MaxScalar(Var, f64),
    Transpose(Var),
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
}

/// Recording of one forward computation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256), dropout: None }
    }

    /// A tape on which [`dropout`](Self::dropout) zeroes activations with
    /// probability `rate` (inverted scaling), drawing masks from `seed`.
    pub fn with_dropout(params: &'p ParamStore, rate: f64, seed: u64) -> Self {
        let mut t = Self::new(params);
        if rate > 0.0 {
            t.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        }
        t
    }

    /// Inverted dropout; the identity unless the tape was built with
    /// [`with_dropout`](Self::with_dropout).
    pub fn dropout(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let Some((rate, rng)) = &mut self.dropout else { return a };
        let keep = 1.0 - *rate;
        let mask = Array2::from_shape_simple_fn(shape, || if rng.random_bool(keep) { 1.0 / keep } else { 0.0 });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    /// Adds the `1 × n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let v = self.value(a) + self.value(r);
        self.push(Op::AddRow(a, r), v)
    }

    /// Multiplies every row of `a` elementwise by the `1 × n` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let v = self.value(a) * self.value(r);
        self.push(Op::MulRow(a, r), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), v)
    }

    /// Adds a constant matrix (no gradient flows into `c`).
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = self.value(a) + c;
        self.push(Op::AddConst(a), v)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(Op::AddConst(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    /// Row-wise softmax. Rows made entirely of `-inf` produce zero rows.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(&self.value(a).view());
        self.push(Op::Softmax(a), v)
    }

    /// Row-wise layer normalisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let mut out = Array2::zeros((rows, cols));
        let mut inv_std = Array2::zeros((rows, 1));
        for (i, row) in x.outer_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[[i, 0]] = is;
            for (o, v) in out.row_mut(i).iter_mut().zip(row.iter()) {
                *o = (v - mean) * is;
            }
        }
        self.push(Op::LayerNorm(a, inv_std), out)
    }

    /// Summed token cross-entropy of `logits` (one row per position).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "one target per logit row");
        let probs = softmax_rows(&x.view());
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = Array2::from_elem((1, 1), total);
        self.push(Op::CrossEntropy(logits, targets.to_vec(), probs), v)
    }

    /// Sum over entries of `weights ⊙ BCE(sigmoid(logits), targets)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Array2<f64>, weights: &Array2<f64>) -> Var {
        let x = self.value(logits);
        let mut total = 0.0;
        Zip::from(x).and(targets).and(weights).for_each(|&x, &t, &w| {
            total += w * bce_logit(x, t);
        });
        let v = Array2::from_elem((1, 1), total);
        // stash targets and weights stacked vertically
        let saved = concatenate(Axis(0), &[targets.view(), weights.view()]).expect("same shape");
        self.push(Op::BceLogits(logits, saved), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(Op::SliceRows(a, start), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start), v)
    }

    /// Column means, producing a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), rows);
        self.push(Op::Gather(table, rows.to_vec()), v)
    }

    /// Elementwise `max(a, floor)`; gradient flows only where `a > floor`.
    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(floor));
        self.push(Op::MaxScalar(a, floor), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Back-propagates from the scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut param_grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, &mut param_grads);
        param_grads
    }

    /// Like [`Tape::backward`] but accumulates into existing gradients.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) {
        assert_eq!(self.shape(loss), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out_val = || node.value.as_ref().expect("value");
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    // y = a bᵀ ; da = g b ; db = gᵀ a
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*r);
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = out_val();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = out_val();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g * out_val();
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = out_val();
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.outer_iter_mut().zip(y.outer_iter()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|r, &yv| *r -= yv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = out_val();
                    let cols = y.ncols() as f64;
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let mean_g = gr.sum() / cols;
                        let mean_gy = gr.dot(&yr) / cols;
                        let is = inv_std[[i, 0]];
                        for j in 0..y.ncols() {
                            ga[[i, j]] = is * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy(a, targets, probs) => {
                    let scale = g[[0, 0]];
                    let mut ga = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        ga[[i, t]] -= 1.0;
                    }
                    ga *= scale;
                    acc(&mut grads, *a, ga);
                }
                Op::BceLogits(a, saved) => {
                    let scale = g[[0, 0]];
                    let x = self.value(*a);
                    let n = x.nrows();
                    let targets = saved.slice(s![..n, ..]);
                    let weights = saved.slice(s![n.., ..]);
                    let mut ga = Array2::zeros(x.dim());
                    Zip::from(&mut ga).and(x).and(&targets).and(&weights).for_each(|o, &x, &t, &w| {
                        *o = scale * w * (sigmoid(x) - t);
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let r = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + r, ..]).to_owned());
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let c = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + c]).to_owned());
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    let r = g.nrows();
                    ga.slice_mut(s![*start..*start + r, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    let c = g.ncols();
                    ga.slice_mut(s![.., *start..*start + c]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    let ga = row.broadcast((rows, cols)).expect("broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, rows) => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::MaxScalar(a, floor) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x <= *floor {
                            *g = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
            }
        }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_logit(x: f64, t: f64) -> f64 {
    if x.is_infinite() {
        let p = if x > 0.0 { 1.0 } else { 0.0 };
        return if t == p { 0.0 } else { f64::INFINITY };
    }
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax; a row with no finite entry maps to zeros.
pub fn softmax_rows(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for (mut o, row) in out.outer_iter_mut().zip(x.outer_iter()) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if m == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (ov, &v) in o.iter_mut().zip(row.iter()) {
            let e = (v - m).exp();
            *ov = e;
            total += e;
        }
        o /= total;
    }
    out
}
