use std::collections::HashSet;

use proptest::prelude::*;
use synsem::corpus::math::{variables, OPERATORS};
use synsem::corpus::vocab::{split_math, BOS, EOS};
use synsem::corpus::*;

fn labels(t: &SyntaxTree, out: &mut HashSet<String>) {
    out.insert(t.label.clone());
    for c in &t.children {
        labels(c, out);
    }
}

/// Independent serialiser: `( label children... )` with every token separate.
fn brackets(t: &SyntaxTree) -> Vec<String> {
    let mut v = vec!["(".to_string(), t.label.clone()];
    for c in &t.children {
        v.extend(brackets(c));
    }
    v.push(")".into());
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bracket_round_trip(seed in any::<u64>(), depth in 1usize..6) {
        let t = generate_math_expression(depth, seed);
        prop_assert_eq!(parse_bracketed_tree(&flatten_tree(&t).join(" ")).unwrap(), t);
    }

    #[test]
    fn infix_round_trip(seed in any::<u64>(), depth in 1usize..6) {
        let t = generate_math_expression(depth, seed);
        prop_assert_eq!(parse_math_expression(&to_infix(&t)).unwrap(), t);
    }

    #[test]
    fn tokenize_round_trip(seed in any::<u64>(), depth in 1usize..6) {
        let s = to_infix(&generate_math_expression(depth, seed));
        let v = Vocabulary::math();
        let ids = tokenize(&s, &v, TokenMode::Math).unwrap();
        prop_assert_eq!(ids[0], BOS);
        prop_assert_eq!(*ids.last().unwrap(), EOS);
        prop_assert_eq!(detokenize(&ids, &v, TokenMode::Math), s);
    }

    #[test]
    fn generator_respects_depth_and_alphabet(seed in any::<u64>(), depth in 1usize..6) {
        let t = generate_math_expression(depth, seed);
        prop_assert!(t.syntax_depth() <= depth);
        let mut seen = HashSet::new();
        labels(&t, &mut seen);
        for l in seen {
            prop_assert!(OPERATORS.contains(&l.as_str()) || l == "Symbol" || l == "Integer"
                || l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'), "label {}", l);
        }
    }

    #[test]
    fn graph_matches_tree(seed in any::<u64>(), depth in 1usize..6) {
        let t = generate_math_expression(depth, seed);
        let g = tree_to_graph(&t, 4, seed);
        prop_assert_eq!(g.node_count(), t.node_count());
        prop_assert_eq!(g.edge_count(), g.node_count() - 1);
        prop_assert_eq!(&g.adjacency, &g.adjacency.t());
        prop_assert!(g.node_features.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn stripping_removes_exactly_the_words(seed in any::<u64>(), depth in 1usize..6) {
        let t = generate_math_expression(depth, seed);
        let s = strip_word_content(&t);
        prop_assert_eq!(s.node_count(), t.node_count() - t.content_count());
        prop_assert_eq!(strip_word_content(&s), s.clone());
        let record = CorpusRecord::math(t.clone(), SplitTag::Train);
        for w in t.content_leaves() {
            prop_assert!(!record.stripped_flat_tree.iter().any(|x| x == w));
        }
    }

    #[test]
    fn flatten_matches_independent_serialiser(seed in any::<u64>(), depth in 1usize..5) {
        let t = generate_math_expression(depth, seed);
        let flat = flatten_tree(&t);
        prop_assert_eq!(&flat, &brackets(&t));
        prop_assert_eq!(flat.len(), 3 * t.node_count());
    }
}

#[test]
fn functional_forms() {
    let t = parse_math_expression("U + cos(n)").unwrap();
    assert_eq!(t.functional(), "Add(Symbol(U), cos(Symbol(n)))");
    assert_eq!(
        flatten_tree(&t).join(" "),
        "( Add ( Symbol ( U ) ) ( cos ( Symbol ( n ) ) ) )"
    );
    assert_eq!(parse_math_expression("cos(E)**b").unwrap().functional(), "Pow(cos(Symbol(E)), Symbol(b))");
    let x = parse_math_expression("x").unwrap();
    assert_eq!((x.functional().as_str(), x.syntax_depth()), ("Symbol(x)", 1));
}

#[test]
fn sin_tokenises_to_six_ids() {
    let v = Vocabulary::math();
    let ids = tokenize("sin(x)", &v, TokenMode::Math).unwrap();
    assert_eq!(ids.len(), 6);
    assert_eq!(split_math("sin(x)"), ["sin", "(", "x", ")"]);
    assert_eq!(tokenize("", &v, TokenMode::Math).unwrap(), [BOS, EOS]);
}

#[test]
fn generation_is_seeded() {
    assert_eq!(generate_math_expression(3, 7), generate_math_expression(3, 7));
    let cfg = CorpusConfig { n_train: 60, n_test: 10, ..CorpusConfig::default() };
    assert_eq!(generate_math_corpus(&cfg, 4), generate_math_corpus(&cfg, 4));
}

#[test]
fn split_hygiene() {
    let cfg = CorpusConfig { n_train: 300, n_test: 40, ..CorpusConfig::default() };
    let s = generate_math_corpus(&cfg, 11);
    let train: HashSet<&str> = s.train.iter().map(|r| r.text.as_str()).collect();
    let train_vars: HashSet<String> = s.train.iter().flat_map(|r| variables(&r.tree)).collect();
    for tag in SplitTag::TEST {
        let recs = s.get(tag);
        assert!(!recs.is_empty(), "{tag}");
        assert!(recs.iter().all(|r| !train.contains(r.text.as_str())), "{tag} overlaps TRAIN");
        assert!(recs.iter().all(|r| r.split == tag));
    }
    // every VAR item names a variable never seen in TRAIN
    for r in &s.var {
        assert!(variables(&r.tree).iter().any(|v| !train_vars.contains(v)), "{}", r.text);
    }
    for r in &s.easy {
        assert!(variables(&r.tree).len() < 2 || r.tree.label == "Eq");
    }
    for r in &s.eq {
        assert_eq!(r.tree.label, "Eq");
    }
}

#[test]
fn natural_corpus_reads_back() {
    let cfg = CorpusConfig { n_train: 40, n_test: 10, ..CorpusConfig::default() };
    let s = generate_natural_corpus(&cfg, 3);
    assert_eq!((s.train.len(), s.eval.len()), (40, 10));
    for r in s.all() {
        let back = CorpusRecord::from_parts(&r.surface, &r.flat_tree, r.split, TokenMode::Natural).unwrap();
        assert_eq!(&back, r);
        assert!(r.stripped_flat_tree.iter().all(|t| !r.surface.contains(t)));
    }
}
