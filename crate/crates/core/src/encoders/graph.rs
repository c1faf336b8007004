//! Graph encoders over syntax graphs: GCN, GraphSAGE and neighbour-restricted attention.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::SyntaxGraph;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GraphKind {
    Gcn,
    Sage,
    TransConv,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GCN" => Ok(GraphKind::Gcn),
            "SAGE" => Ok(GraphKind::Sage),
            "TRANSCONV" => Ok(GraphKind::TransConv),
            _ => Err(Error::Invalid(format!("unknown graph kind {s:?}"))),
        }
    }
}

/// Weights of one graph layer.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphLayer {
    /// `H' = Â H W`
    Gcn { w: Linear },
    /// `H' = H W₁ + mean_{u∈N(v)} H_u W₂`
    Sage { self_w: Linear, neigh_w: Linear },
    /// `H' = softmax_N(QKᵀ/√d) V + H W_r`
    TransConv { q: Linear, k: Linear, v: Linear, res: Linear },
}

impl GraphLayer {
    pub fn new(init: &mut Init, kind: GraphKind, d_in: usize, d_out: usize) -> Self {
        match kind {
            GraphKind::Gcn => GraphLayer::Gcn { w: init.linear("w", d_in, d_out, false) },
            GraphKind::Sage => GraphLayer::Sage {
                self_w: init.linear("self", d_in, d_out, false),
                neigh_w: init.linear("neigh", d_in, d_out, false),
            },
            GraphKind::TransConv => GraphLayer::TransConv {
                q: init.linear("q", d_in, d_out, false),
                k: init.linear("k", d_in, d_out, false),
                v: init.linear("v", d_in, d_out, false),
                res: init.linear("res", d_in, d_out, false),
            },
        }
    }

    pub fn kind(&self) -> GraphKind {
        match self {
            GraphLayer::Gcn { .. } => GraphKind::Gcn,
            GraphLayer::Sage { .. } => GraphKind::Sage,
            GraphLayer::TransConv { .. } => GraphKind::TransConv,
        }
    }
}

/// `D̂^{-1/2}(A + I)D̂^{-1/2}`.
pub fn gcn_normalize(adjacency: &Array2<f64>) -> Array2<f64> {
    let n = adjacency.nrows();
    let a_hat = adjacency + &Array2::<f64>::eye(n);
    let inv_sqrt: Vec<f64> = a_hat.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * a_hat[[i, j]] * inv_sqrt[j])
}

/// Row-normalised adjacency; isolated nodes get an all-zero row.
pub fn mean_aggregator(adjacency: &Array2<f64>) -> Array2<f64> {
    let mut m = adjacency.clone();
    for mut row in m.rows_mut() {
        let deg = row.sum();
        if deg > 0.0 {
            row /= deg;
        }
    }
    m
}

/// Additive mask keeping only graph neighbours.
pub fn neighbour_mask(adjacency: &Array2<f64>) -> Array2<f64> {
    adjacency.mapv(|a| if a != 0.0 { 0.0 } else { f64::NEG_INFINITY })
}

/// Adjacency-derived constants shared by every layer of one forward pass.
pub struct GraphOperators {
    pub gcn: Array2<f64>,
    pub mean: Array2<f64>,
    pub mask: Array2<f64>,
}

impl GraphOperators {
    pub fn new(adjacency: &Array2<f64>) -> Self {
        Self { gcn: gcn_normalize(adjacency), mean: mean_aggregator(adjacency), mask: neighbour_mask(adjacency) }
    }
}

/// One propagation step on the tape. `relu` selects the activation.
pub fn graph_layer_tape(tape: &mut Tape, ops: &GraphOperators, h: Var, layer: &GraphLayer, relu: bool) -> Var {
    let out = match layer {
        GraphLayer::Gcn { w } => {
            let a = tape.constant(ops.gcn.clone());
            let ah = tape.matmul(a, h);
            w.forward(tape, ah)
        }
        GraphLayer::Sage { self_w, neigh_w } => {
            let own = self_w.forward(tape, h);
            let m = tape.constant(ops.mean.clone());
            let agg = tape.matmul(m, h);
            let nb = neigh_w.forward(tape, agg);
            tape.add(own, nb)
        }
        GraphLayer::TransConv { q, k, v, res } => {
            let qv = q.forward(tape, h);
            let kv = k.forward(tape, h);
            let vv = v.forward(tape, h);
            let d = tape.shape(qv).1 as f64;
            let s = tape.matmul_nt(qv, kv);
            let s = tape.scale(s, 1.0 / d.sqrt());
            let s = tape.add_const(s, &ops.mask);
            let w = tape.softmax(s);
            let att = tape.matmul(w, vv);
            let r = res.forward(tape, h);
            tape.add(att, r)
        }
    };
    if relu {
        tape.relu(out)
    } else {
        out
    }
}

/// Pure form of [`graph_layer_tape`].
pub fn graph_layer(
    adjacency: &Array2<f64>,
    h: &Array2<f64>,
    layer: &GraphLayer,
    store: &ParamStore,
    relu: bool,
) -> Result<Array2<f64>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n || h.nrows() != n {
        return Err(Error::Shape(format!("adjacency {:?} with {} node rows", adjacency.dim(), h.nrows())));
    }
    let ops = GraphOperators::new(adjacency);
    let mut tape = Tape::new(store);
    let hv = tape.constant(h.clone());
    let out = graph_layer_tape(&mut tape, &ops, hv, layer, relu);
    Ok(tape.value(out).clone())
}

/// Stacked graph layers over label embeddings, mean-pooled to one row.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoder {
    pub label_emb: ParamId,
    pub layers: Vec<GraphLayer>,
}

impl GraphEncoder {
    pub fn new(init: &mut Init, kind: GraphKind, n_labels: usize, hidden: usize, n_layers: usize) -> Self {
        let label_emb = init.normal("label_emb", n_labels, hidden, 0.5);
        let layers =
            (0..n_layers).map(|l| init.scoped(&format!("layer{l}"), |init| GraphLayer::new(init, kind, hidden, hidden))).collect();
        Self { label_emb, layers }
    }

    /// Initial node matrix: label embeddings, replaced by the graph's noise
    /// features on content nodes.
    pub fn node_inputs(&self, tape: &mut Tape, graph: &SyntaxGraph, label_ids: &[usize]) -> Result<Var> {
        let n = graph.node_count();
        if n == 0 {
            return Err(Error::Invalid("empty graph".into()));
        }
        if label_ids.len() != n {
            return Err(Error::Shape(format!("{} label ids for {n} nodes", label_ids.len())));
        }
        let hidden = tape.params().get(self.label_emb).ncols();
        if graph.node_features.ncols() != hidden {
            return Err(Error::Shape(format!("features of width {} for hidden {hidden}", graph.node_features.ncols())));
        }
        let table = tape.param(self.label_emb);
        let emb = tape.gather(table, label_ids);
        let keep = Array2::from_shape_fn((n, hidden), |(i, _)| if graph.content[i] { 0.0 } else { 1.0 });
        let keep = tape.constant(keep);
        let emb = tape.mul(emb, keep);
        Ok(tape.add_const(emb, &graph.node_features))
    }

    /// Final node states (before pooling).
    pub fn node_states(&self, tape: &mut Tape, graph: &SyntaxGraph, label_ids: &[usize]) -> Result<Var> {
        let ops = GraphOperators::new(&graph.adjacency);
        let mut h = self.node_inputs(tape, graph, label_ids)?;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = graph_layer_tape(tape, &ops, h, layer, i < last);
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, graph: &SyntaxGraph, label_ids: &[usize]) -> Result<Var> {
        let h = self.node_states(tape, graph, label_ids)?;
        Ok(tape.mean_rows(h))
    }
}

/// Pooled graph embedding as a plain vector.
pub fn graph_encode(enc: &GraphEncoder, store: &ParamStore, graph: &SyntaxGraph, label_ids: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let out = enc.forward(&mut tape, graph, label_ids)?;
    Ok(tape.value(out).iter().copied().collect())
}
