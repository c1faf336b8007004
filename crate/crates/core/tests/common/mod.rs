//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synsem::corpus::SyntaxTree;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Causal multi-head attention by explicit loops. With `memory`, `z` is an
/// extra first key and value row visible to every query.
pub fn attention_oracle(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    n_heads: usize,
    memory: Option<&[f64]>,
) -> Array2<f64> {
    let (seq, d) = q.dim();
    let dh = d / n_heads;
    let mut keys: Vec<Vec<f64>> = Vec::new();
    let mut vals: Vec<Vec<f64>> = Vec::new();
    if let Some(z) = memory {
        keys.push(z.to_vec());
        vals.push(z.to_vec());
    }
    for t in 0..seq {
        keys.push(k.row(t).to_vec());
        vals.push(v.row(t).to_vec());
    }
    let off = usize::from(memory.is_some());
    let mut out = Array2::zeros((seq, d));
    for h in 0..n_heads {
        for i in 0..seq {
            let visible = i + 1 + off;
            let mut scores = Vec::with_capacity(visible);
            for key in keys.iter().take(visible) {
                let mut s = 0.0;
                for c in h * dh..(h + 1) * dh {
                    s += q[[i, c]] * key[c];
                }
                scores.push(s / (dh as f64).sqrt());
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for (j, w) in e.iter().enumerate() {
                for c in h * dh..(h + 1) * dh {
                    out[[i, c]] += w / total * vals[j][c];
                }
            }
        }
    }
    out
}

/// `(Σ_i [M,1] W_m^i) ⊙ (Σ_i [z,1] W_z^i)` by explicit loops.
pub fn fusion_oracle(m: &Array2<f64>, z: &[f64], wm: &[Array2<f64>], wz: &[Array2<f64>]) -> Array2<f64> {
    let (rows, d) = m.dim();
    let mut out = Array2::zeros((rows, d));
    for t in 0..rows {
        for c in 0..d {
            let mut left = 0.0;
            let mut right = 0.0;
            for (a, b) in wm.iter().zip(wz) {
                for j in 0..d {
                    left += m[[t, j]] * a[[j, c]];
                }
                left += a[[d, c]];
                for (j, zj) in z.iter().enumerate() {
                    right += zj * b[[j, c]];
                }
                right += b[[z.len(), c]];
            }
            out[[t, c]] = left * right;
        }
    }
    out
}

/// `D̂^{-1/2}(A+I)D̂^{-1/2} H W` by explicit loops.
pub fn gcn_oracle(a: &Array2<f64>, h: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let a_hat = |i: usize, j: usize| a[[i, j]] + if i == j { 1.0 } else { 0.0 };
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a_hat(i, j)).sum()).collect();
    let mut out = Array2::zeros((n, w.ncols()));
    for i in 0..n {
        for c in 0..w.ncols() {
            let mut s = 0.0;
            for j in 0..n {
                let norm = a_hat(i, j) / (deg[i] * deg[j]).sqrt();
                for k in 0..h.ncols() {
                    s += norm * h[[j, k]] * w[[k, c]];
                }
            }
            out[[i, c]] = s;
        }
    }
    out
}

/// Ordered forest used as the state of the edit-script search.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub label: u8,
    pub children: Vec<Node>,
}

fn forest_size(f: &[Node]) -> usize {
    f.iter().map(|n| 1 + forest_size(&n.children)).sum()
}

/// Every forest reachable from `f` by one rename, deletion or insertion.
fn neighbours(f: &[Node], labels: &[u8]) -> Vec<Vec<Node>> {
    let mut out = Vec::new();
    // edits at this level
    for i in 0..f.len() {
        for &l in labels {
            if l != f[i].label {
                let mut g = f.to_vec();
                g[i].label = l;
                out.push(g);
            }
        }
        let mut g = f[..i].to_vec();
        g.extend(f[i].children.iter().cloned());
        g.extend(f[i + 1..].iter().cloned());
        out.push(g);
    }
    for lo in 0..=f.len() {
        for hi in lo..=f.len() {
            for &l in labels {
                let mut g = f[..lo].to_vec();
                g.push(Node { label: l, children: f[lo..hi].to_vec() });
                g.extend(f[hi..].iter().cloned());
                out.push(g);
            }
        }
    }
    // edits inside a subtree
    for i in 0..f.len() {
        for inner in neighbours(&f[i].children, labels) {
            let mut g = f.to_vec();
            g[i].children = inner;
            out.push(g);
        }
    }
    out
}

/// Unit-cost edit distances from `source` to every forest of at most
/// `max_nodes` nodes, by breadth-first search over single edits.
pub fn edit_search(source: &Node, max_nodes: usize, labels: &[u8]) -> HashMap<Vec<Node>, usize> {
    let start = vec![source.clone()];
    let mut dist = HashMap::from([(start.clone(), 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(f) = queue.pop_front() {
        let d = dist[&f];
        for g in neighbours(&f, labels) {
            if forest_size(&g) <= max_nodes && !dist.contains_key(&g) {
                dist.insert(g.clone(), d + 1);
                queue.push_back(g);
            }
        }
    }
    dist
}

/// All ordered trees with at most `max_nodes` nodes over `labels`.
pub fn all_trees(max_nodes: usize, labels: &[u8]) -> Vec<Node> {
    fn forests(n: usize, labels: &[u8]) -> Vec<Vec<Node>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        // first tree takes k nodes
        for k in 1..=n {
            for t in trees(k, labels) {
                for rest in forests(n - k, labels) {
                    let mut f = vec![t.clone()];
                    f.extend(rest);
                    out.push(f);
                }
            }
        }
        out
    }
    fn trees(n: usize, labels: &[u8]) -> Vec<Node> {
        let mut out = Vec::new();
        for &l in labels {
            for children in forests(n - 1, labels) {
                out.push(Node { label: l, children });
            }
        }
        out
    }
    (1..=max_nodes).flat_map(|n| trees(n, labels)).collect()
}

pub fn to_syntax_tree(n: &Node) -> SyntaxTree {
    SyntaxTree::node(((b'A' + n.label) as char).to_string(), n.children.iter().map(to_syntax_tree).collect())
}

/// Central finite-difference derivative of `f` at `x` along coordinate `i`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let x0 = x[i];
    x[i] = x0 + h;
    let plus = f(x);
    x[i] = x0 - h;
    let minus = f(x);
    x[i] = x0;
    (plus - minus) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Fourth-order central difference, `O(h⁴)` truncation error.
pub fn five_point_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let x0 = x[i];
    let mut at = |d: f64| {
        x[i] = x0 + d;
        f(x)
    };
    let v = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
    x[i] = x0;
    v
}

/// Relative error whose denominator never drops below `floor`; exact zeros
/// are then judged on the absolute scale of the difference noise.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
