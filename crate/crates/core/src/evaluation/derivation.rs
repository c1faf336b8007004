//! Downstream probes on premise/conclusion pairs built by symbolic operations.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::math::{differentiate, integrate, to_infix, variables, MathGenerator};
use crate::corpus::vocab::split_math;
use crate::corpus::SyntaxTree;
use crate::error::{Error, Result};
use crate::evaluation::metrics::probe_linear;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operation {
    Differentiate,
    Integrate,
    AddTerm,
    MultiplyTerm,
}

impl Operation {
    pub const ALL: [Operation; 4] =
        [Operation::Differentiate, Operation::Integrate, Operation::AddTerm, Operation::MultiplyTerm];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Differentiate => "differentiate",
            Operation::Integrate => "integrate",
            Operation::AddTerm => "add-term",
            Operation::MultiplyTerm => "multiply-term",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivationPair {
    pub premise: SyntaxTree,
    pub conclusion: SyntaxTree,
    pub op: Operation,
}

fn small_term(g: &mut MathGenerator) -> SyntaxTree {
    g.generate(2)
}

/// Applies `op` to `premise`, or `None` when the result is trivial or
/// unsupported.
pub fn apply_operation(premise: &SyntaxTree, op: Operation, g: &mut MathGenerator) -> Option<SyntaxTree> {
    let vars = variables(premise);
    let out = match op {
        Operation::Differentiate => differentiate(premise, vars.choose(g.rng())?),
        Operation::Integrate => integrate(premise, vars.choose(g.rng())?)?,
        Operation::AddTerm => SyntaxTree::node("Add", vec![premise.clone(), small_term(g)]),
        Operation::MultiplyTerm => SyntaxTree::node("Mul", vec![premise.clone(), small_term(g)]),
    };
    (out.label != "Integer" && &out != premise).then_some(out)
}

/// `n_per_op` pairs per operation whose surfaces fit in `max_tokens`.
pub fn generate_derivation_pairs(n_per_op: usize, max_depth: usize, max_tokens: usize, seed: u64) -> Vec<DerivationPair> {
    let mut g = MathGenerator::new(seed);
    let mut out = Vec::with_capacity(4 * n_per_op);
    for op in Operation::ALL {
        let mut made = 0;
        let mut attempts = 0;
        while made < n_per_op && attempts < 200 * n_per_op.max(1) {
            attempts += 1;
            let premise = g.generate(max_depth);
            let Some(conclusion) = apply_operation(&premise, op, &mut g) else { continue };
            let fits = |t: &SyntaxTree| split_math(&to_infix(t)).len() <= max_tokens;
            if fits(&premise) && fits(&conclusion) {
                out.push(DerivationPair { premise, conclusion, op });
                made += 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivationScores {
    pub op_acc: f64,
    pub op_f1: f64,
    pub concl_acc: f64,
    pub concl_f1: f64,
}

fn check_balance<T: Ord + Clone>(labels: &[T]) -> Result<()> {
    let mut sorted = labels.to_vec();
    sorted.sort();
    let mut counts = Vec::new();
    for chunk in sorted.chunk_by(|a, b| a == b) {
        counts.push(chunk.len());
    }
    let (lo, hi) = (counts.iter().min().copied().unwrap_or(0), counts.iter().max().copied().unwrap_or(0));
    if lo == 0 || hi > 10 * lo {
        return Err(Error::Invalid(format!("class imbalance {hi}:{lo} exceeds 10:1")));
    }
    Ok(())
}

/// Row-wise `[premise | conclusion]` feature matrix.
pub fn pair_features(premise: ArrayView2<f64>, conclusion: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[premise, conclusion]).expect("equal row counts")
}

/// Operation classification on `op_features` and valid-conclusion detection
/// on `concl_features`, each an 80/20 linear probe.
pub fn derivation_probes(
    op_features: ArrayView2<f64>,
    ops: &[Operation],
    concl_features: ArrayView2<f64>,
    concl_labels: &[bool],
    seed: u64,
) -> Result<DerivationScores> {
    check_balance(ops)?;
    check_balance(concl_labels)?;
    let (op_acc, op_f1) = probe_linear(op_features, ops, seed)?;
    let (concl_acc, concl_f1) = probe_linear(concl_features, concl_labels, seed.wrapping_add(1))?;
    Ok(DerivationScores { op_acc, op_f1, concl_acc, concl_f1 })
}

/// For each pair index, a different pair whose conclusion serves as the
/// negative (a seeded derangement).
pub fn negative_partners(n: usize, seed: u64) -> Vec<usize> {
    if n < 2 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let j = rng.random_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}
