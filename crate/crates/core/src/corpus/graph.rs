//! Adjacency and node-feature form of a syntax tree.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::{is_preterminal, SyntaxTree};
use crate::error::{Error, Result};

/// Label given to surface-content nodes; their features are noise, not a lookup.
pub const CONTENT_LABEL: &str = "<content>";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntaxGraph {
    /// Symmetric 0/1 parent–child adjacency.
    pub adjacency: Array2<f64>,
    /// Uniform noise rows for content nodes, zero rows elsewhere.
    pub node_features: Array2<f64>,
    pub node_labels: Vec<String>,
    pub content: Vec<bool>,
}

impl SyntaxGraph {
    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        let mut e = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] != 0.0 {
                    e += 1;
                }
            }
        }
        e
    }

    /// Same graph with nodes reordered: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::Shape(format!("permutation of length {} for {n} nodes", perm.len())));
        }
        let adjacency = Array2::from_shape_fn((n, n), |(i, j)| self.adjacency[[perm[i], perm[j]]]);
        let node_features = Array2::from_shape_fn(self.node_features.dim(), |(i, k)| self.node_features[[perm[i], k]]);
        Ok(Self {
            adjacency,
            node_features,
            node_labels: perm.iter().map(|&p| self.node_labels[p].clone()).collect(),
            content: perm.iter().map(|&p| self.content[p]).collect(),
        })
    }
}

/// Pre-order node numbering. Leaf children of preterminals are content nodes
/// and get features drawn uniformly from `[-1, 1]`.
pub fn tree_to_graph(tree: &SyntaxTree, feature_dim: usize, rng_seed: u64) -> SyntaxGraph {
    assert!(feature_dim >= 1, "feature_dim must be positive");
    let mut labels = Vec::new();
    let mut content = Vec::new();
    let mut edges = Vec::new();
    fn walk(
        t: &SyntaxTree,
        parent: Option<usize>,
        parent_pre: bool,
        labels: &mut Vec<String>,
        content: &mut Vec<bool>,
        edges: &mut Vec<(usize, usize)>,
    ) {
        let id = labels.len();
        let is_content = parent_pre && t.is_leaf();
        labels.push(if is_content { CONTENT_LABEL.to_string() } else { t.label.clone() });
        content.push(is_content);
        if let Some(p) = parent {
            edges.push((p, id));
        }
        let pre = is_preterminal(&t.label);
        for c in &t.children {
            walk(c, Some(id), pre, labels, content, edges);
        }
    }
    walk(tree, None, false, &mut labels, &mut content, &mut edges);
    let n = labels.len();
    let mut adjacency = Array2::zeros((n, n));
    for (a, b) in edges {
        adjacency[[a, b]] = 1.0;
        adjacency[[b, a]] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut node_features = Array2::zeros((n, feature_dim));
    for (i, &is_content) in content.iter().enumerate() {
        if is_content {
            for k in 0..feature_dim {
                node_features[[i, k]] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    SyntaxGraph { adjacency, node_features, node_labels: labels, content }
}
