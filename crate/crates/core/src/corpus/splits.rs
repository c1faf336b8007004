//! Training corpus and the five generalisation test splits.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::math::{rename_variable, to_infix, variable_letters, variables, MathGenerator};
use super::natural::NaturalGenerator;
use super::tree::SyntaxTree;
use super::vocab::{split_math, TokenMode};
use super::{CorpusRecord, SplitTag};

/// Multi-letter variable names never produced by the generator.
pub const UNSEEN_NAMES: &[&str] =
    &["alpha", "beta", "gamma", "delta", "theta", "kappa", "omega", "zeta", "rho", "tau", "phi", "psi", "mu", "nu"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub max_depth: usize,
    /// Longest surface form, in tokens, admitted into any split.
    pub max_tokens: usize,
    pub leaf_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_train: 2000, n_test: 200, max_depth: 4, max_tokens: 48, leaf_prob: 0.4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<CorpusRecord>,
    pub eval: Vec<CorpusRecord>,
    pub var: Vec<CorpusRecord>,
    pub easy: Vec<CorpusRecord>,
    pub eq: Vec<CorpusRecord>,
    pub len: Vec<CorpusRecord>,
}

impl Splits {
    pub fn get(&self, tag: SplitTag) -> &[CorpusRecord] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Eval => &self.eval,
            SplitTag::Var => &self.var,
            SplitTag::Easy => &self.easy,
            SplitTag::Eq => &self.eq,
            SplitTag::Len => &self.len,
        }
    }

    pub fn get_mut(&mut self, tag: SplitTag) -> &mut Vec<CorpusRecord> {
        match tag {
            SplitTag::Train => &mut self.train,
            SplitTag::Eval => &mut self.eval,
            SplitTag::Var => &mut self.var,
            SplitTag::Easy => &mut self.easy,
            SplitTag::Eq => &mut self.eq,
            SplitTag::Len => &mut self.len,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &CorpusRecord> {
        SplitTag::ALL.into_iter().flat_map(move |t| self.get(t).iter())
    }
}

fn fresh_letter(rng: &mut ChaCha8Rng, used: &[String]) -> String {
    let free: Vec<String> = variable_letters().into_iter().filter(|l| !used.contains(l)).collect();
    free.choose(rng).expect("fewer than 52 variables in use").clone()
}

fn add_terms(base: &SyntaxTree, extra: Vec<SyntaxTree>) -> SyntaxTree {
    let mut terms = if base.label == "Add" { base.children.clone() } else { vec![base.clone()] };
    terms.extend(extra);
    SyntaxTree::node("Add", terms)
}

/// Variable renamed to an unseen multi-letter name: `U + cos(n)` → `U + cos(beta)`.
pub fn var_variant(tree: &SyntaxTree, rng: &mut ChaCha8Rng) -> Option<SyntaxTree> {
    let last = variables(tree).pop()?;
    let name = UNSEEN_NAMES.choose(rng).expect("names");
    Some(rename_variable(tree, &last, name))
}

/// All variables merged into the first, so strictly fewer distinct variables.
pub fn easy_variant(tree: &SyntaxTree) -> Option<SyntaxTree> {
    let vars = variables(tree);
    if vars.len() < 2 {
        return None;
    }
    Some(vars[1..].iter().fold(tree.clone(), |t, v| rename_variable(&t, v, &vars[0])))
}

/// Equation with a fresh left-hand variable: `U + cos(n)` → `E = U + cos(n)`.
pub fn eq_variant(tree: &SyntaxTree, rng: &mut ChaCha8Rng) -> SyntaxTree {
    let lhs = fresh_letter(rng, &variables(tree));
    SyntaxTree::node("Eq", vec![SyntaxTree::symbol(lhs), tree.clone()])
}

/// Two extra top-level terms in fresh variables: `U + cos(n)` → `U + cos(n) + A + B`.
pub fn len_variant(tree: &SyntaxTree, rng: &mut ChaCha8Rng) -> SyntaxTree {
    let mut used = variables(tree);
    let a = fresh_letter(rng, &used);
    used.push(a.clone());
    let b = fresh_letter(rng, &used);
    add_terms(tree, vec![SyntaxTree::symbol(a), SyntaxTree::symbol(b)])
}

/// Splits a pool of expressions into TRAIN and the five test splits.
///
/// The first `n_train` distinct, short-enough expressions form TRAIN. Later pool
/// items seed the test splits; any candidate whose surface occurs in TRAIN or
/// already in that split is skipped.
pub fn build_generalisation_splits(pool: &[SyntaxTree], cfg: &CorpusConfig, rng_seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(1));
    let fits = |t: &SyntaxTree| split_math(&to_infix(t)).len() <= cfg.max_tokens;
    let mut splits = Splits::default();
    let mut train_seen = HashSet::new();
    let mut rest = Vec::new();
    for t in pool {
        if !fits(t) {
            continue;
        }
        if splits.train.len() < cfg.n_train {
            if train_seen.insert(to_infix(t)) {
                splits.train.push(CorpusRecord::math(t.clone(), SplitTag::Train));
            }
        } else {
            rest.push(t);
        }
    }
    let mut seen: Vec<HashSet<String>> = vec![HashSet::new(); SplitTag::ALL.len()];
    for src in rest {
        let candidates = [
            (SplitTag::Eval, Some(src.clone())),
            (SplitTag::Var, var_variant(src, &mut rng)),
            (SplitTag::Easy, easy_variant(src)),
            (SplitTag::Eq, Some(eq_variant(src, &mut rng))),
            (SplitTag::Len, Some(len_variant(src, &mut rng))),
        ];
        for (tag, cand) in candidates {
            let Some(cand) = cand else { continue };
            let list = splits.get_mut(tag);
            if list.len() >= cfg.n_test || !fits(&cand) {
                continue;
            }
            let surface = to_infix(&cand);
            if train_seen.contains(&surface) || !seen[tag as usize].insert(surface) {
                continue;
            }
            list.push(CorpusRecord::math(cand, tag));
        }
        if SplitTag::TEST.iter().all(|&t| splits.get(t).len() >= cfg.n_test) {
            break;
        }
    }
    splits
}

/// Generates the pool and splits it; deterministic per seed.
pub fn generate_math_corpus(cfg: &CorpusConfig, seed: u64) -> Splits {
    let mut generator = MathGenerator::new(seed);
    generator.leaf_prob = cfg.leaf_prob;
    let pool_size = 4 * (cfg.n_train + 5 * cfg.n_test) + 100;
    let pool: Vec<SyntaxTree> = (0..pool_size).map(|_| generator.generate(cfg.max_depth)).collect();
    build_generalisation_splits(&pool, cfg, seed)
}

/// Template sentences: TRAIN and EVAL only, disjoint by surface.
pub fn generate_natural_corpus(cfg: &CorpusConfig, seed: u64) -> Splits {
    let mut generator = NaturalGenerator::new(seed);
    let mut seen = HashSet::new();
    let mut splits = Splits::default();
    let attempts = 20 * (cfg.n_train + cfg.n_test) + 100;
    for _ in 0..attempts {
        if splits.train.len() >= cfg.n_train && splits.eval.len() >= cfg.n_test {
            break;
        }
        let s = generator.generate();
        if !seen.insert(s.text.clone()) {
            continue;
        }
        let tag = if splits.train.len() < cfg.n_train { SplitTag::Train } else { SplitTag::Eval };
        splits.get_mut(tag).push(CorpusRecord::new(s.text, s.tree, tag, TokenMode::Natural));
    }
    splits
}

/// Deterministic shuffle helper shared by the training and evaluation code.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::math::parse_math_expression;

    #[test]
    fn canonical_variants() {
        let t = parse_math_expression("U + cos(n)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = to_infix(&var_variant(&t, &mut rng).unwrap());
        assert!(v.starts_with("U + cos(") && !v.contains("(n)"), "{v}");
        let e = to_infix(&eq_variant(&t, &mut rng));
        assert!(e.ends_with(" = U + cos(n)") && e.len() == "E = U + cos(n)".len(), "{e}");
        let l = to_infix(&len_variant(&t, &mut rng));
        assert!(l.starts_with("U + cos(n) + "), "{l}");
        assert_eq!(to_infix(&easy_variant(&t).unwrap()), "U + cos(U)");
    }

    #[test]
    fn splits_are_disjoint_from_train() {
        let cfg = CorpusConfig { n_train: 300, n_test: 40, ..CorpusConfig::default() };
        let s = generate_math_corpus(&cfg, 1);
        assert_eq!(s.train.len(), 300);
        let train: HashSet<&str> = s.train.iter().map(|r| r.text.as_str()).collect();
        for tag in SplitTag::TEST {
            assert_eq!(s.get(tag).len(), 40, "{tag}");
            for r in s.get(tag) {
                assert!(!train.contains(r.text.as_str()));
                assert_eq!(r.split, tag);
            }
        }
        assert_eq!(generate_math_corpus(&cfg, 1), s);
    }
}
