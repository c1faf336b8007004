mod common;

use common::*;
use ndarray::{array, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use synsem::corpus::{generate_math_corpus, strip_word_content, CorpusConfig, SyntaxTree, TokenMode, Vocabulary};
use synsem::evaluation::derivation::{derivation_probes, generate_derivation_pairs, negative_partners};
use synsem::evaluation::metrics::*;
use synsem::evaluation::projection::{export_projection_2d, pca_2d, read_projection};
use synsem::evaluation::ted::tree_edit_distance;
use synsem::evaluation::traversal::*;
use synsem::evaluation::*;
use synsem::model::{tree_vocabulary, Model, ModelConfig, NoiseSeeds};

fn normal_matrix(r: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(r))
}

#[test]
fn ted_matches_edit_script_search() {
    let labels = [0u8, 1];
    let trees = all_trees(4, &labels);
    assert_eq!(trees.len(), 2 + 4 + 16 + 80);
    for a in &trees {
        let dist = edit_search(a, 4, &labels);
        let ta = to_syntax_tree(a);
        for b in &trees {
            let want = dist[&vec![b.clone()]];
            let tb = to_syntax_tree(b);
            assert_eq!(tree_edit_distance(&ta, &tb), want, "{ta:?} vs {tb:?}");
        }
    }
}

#[test]
fn ted_is_a_metric_on_larger_trees() {
    let labels = [0u8, 1];
    let pool = all_trees(6, &labels);
    let mut r = rng(5);
    let sample: Vec<_> = pool.choose_multiple(&mut r, 8).cloned().collect();
    let oracle: Vec<_> = sample.iter().map(|s| edit_search(s, 6, &labels)).collect();
    let t: Vec<SyntaxTree> = sample.iter().map(to_syntax_tree).collect();
    let d = |i: usize, j: usize| tree_edit_distance(&t[i], &t[j]);
    for i in 0..t.len() {
        assert_eq!(d(i, i), 0);
        for j in 0..t.len() {
            assert_eq!(d(i, j), oracle[i][&vec![sample[j].clone()]]);
            assert_eq!(d(i, j), d(j, i));
            for k in 0..t.len() {
                assert!(d(i, k) <= d(i, j) + d(j, k));
            }
        }
    }
    assert_eq!(tree_edit_distance(&SyntaxTree::leaf("A"), &SyntaxTree::leaf("B")), 1);
}

#[test]
fn kmeans_small_cases() {
    // two symmetric pairs
    let x = array![[0.0, 0.0], [0.0, 1.0], [5.0, 0.0], [5.0, 1.0]];
    let mut best = f64::INFINITY;
    for mask in 1u32..15 {
        let mut sse = 0.0;
        for side in [0, 1] {
            let members: Vec<usize> = (0..4).filter(|i| (mask >> i & 1) == side).collect();
            let c = x.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
            sse += members.iter().map(|&i| (&x.row(i) - &c).mapv(|v| v * v).sum()).sum::<f64>();
        }
        best = best.min(sse / 4.0);
    }
    assert!((kmeans_mse(x.view(), 2, 0).unwrap() - best).abs() < 1e-12);
    assert!((best - 0.25).abs() < 1e-12);
    let distinct = array![[0.0], [0.0], [3.0], [7.0], [7.0]];
    assert_eq!(kmeans_mse(distinct.view(), 3, 1).unwrap(), 0.0);
    assert!(kmeans_mse(x.view(), 0, 0).is_err());
    assert!(kmeans_mse(x.view(), 5, 0).is_err());
}

#[test]
fn kmeans_is_non_increasing_in_k() {
    let mut r = rng(2);
    let x = normal_matrix(&mut r, 60, 3);
    let mut prev = f64::INFINITY;
    for k in 1..=8 {
        let v = kmeans_mse(x.view(), k, 3).unwrap();
        assert!(v <= prev + 1e-12, "k={k}");
        prev = v;
    }
}

#[test]
fn probe_on_separable_and_shuffled_labels() {
    let mut r = rng(3);
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 3), |(i, j)| {
        let centre = if labels[i] == 0 { -4.0 } else { 4.0 };
        let noise: f64 = StandardNormal.sample(&mut r);
        (if j == 0 { centre } else { 0.0 }) + 0.5 * noise
    });
    let (acc, f1) = probe_linear(x.view(), &labels, 0).unwrap();
    assert_eq!((acc, f1), (1.0, 1.0));
    assert_eq!(probe_linear(x.view(), &labels, 0).unwrap(), (acc, f1));

    let n = 1000;
    let x = normal_matrix(&mut r, n, 4);
    let mut y: Vec<usize> = (0..n).map(|i| i % 4).collect();
    y.shuffle(&mut r);
    let (acc, f1) = probe_linear(x.view(), &y, 1).unwrap();
    assert!((acc - 0.25).abs() <= 0.1, "acc {acc}");
    assert!((0.0..=1.0).contains(&f1));
    assert!(probe_linear(x.view(), &vec![3; n], 1).is_err());
}

#[test]
fn accuracy_and_macro_f1_by_hand() {
    // class 0: tp 1, fp 1, fn 1 → f1 1/2; class 1: tp 1, fp 1, fn 1 → 1/2
    let (acc, f1) = accuracy_f1(&[0, 0, 1, 1], &[0, 1, 0, 1]);
    assert_eq!(acc, 0.5);
    assert!((f1 - 0.5).abs() < 1e-15);
}

#[test]
fn mi_estimator_cases() {
    let mut r = rng(4);
    let x = normal_matrix(&mut r, 2000, 1);
    let y = normal_matrix(&mut r, 2000, 1);
    let indep = mi_estimate(x.view(), y.view()).unwrap();
    assert!((0.0..=0.1).contains(&indep), "{indep}");
    let shifted = mi_estimate((&x + 3.5).view(), (&y - 2.0).view()).unwrap();
    assert!((shifted - indep).abs() <= 0.05);

    let n = 5000;
    let rho: f64 = 0.9;
    let a = normal_matrix(&mut r, n, 1);
    let e = normal_matrix(&mut r, n, 1);
    let b = &a * rho + &e * (1.0 - rho * rho).sqrt();
    let mi = mi_estimate(a.view(), b.view()).unwrap();
    let truth = -0.5 * (1.0 - rho * rho).ln();
    assert!((mi - truth).abs() <= 0.15, "mi {mi} vs {truth}");

    let x = normal_matrix(&mut r, 500, 2);
    let noisy = &x + &(normal_matrix(&mut r, 500, 2) * 0.5);
    assert!(mi_estimate(x.view(), x.view()).unwrap() >= mi_estimate(x.view(), noisy.view()).unwrap());
    assert!(mi_estimate(x.slice(ndarray::s![..3, ..]), x.slice(ndarray::s![..3, ..])).is_err());
}

#[test]
fn divergences_closed_forms() {
    // population fits N(0,1) and N(1,1)
    let s = array![[-1.0], [1.0]];
    let y = array![[0.0], [2.0]];
    let (kl, wass) = gaussian_divergences(s.view(), y.view()).unwrap();
    assert!((kl - 0.5).abs() <= 1e-8 && (wass - 1.0).abs() <= 1e-8);
    let (kl, wass) = gaussian_divergences(s.view(), s.view()).unwrap();
    assert_eq!((kl, wass), (0.0, 0.0));

    let mut r = rng(6);
    let zs = normal_matrix(&mut r, 50, 4) * 1.5 + 0.3;
    let zy = normal_matrix(&mut r, 40, 4) * 0.7 - 0.2;
    let fit = |z: &Array2<f64>, j: usize| {
        let col: Vec<f64> = z.column(j).to_vec();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
        (m, v)
    };
    let (mut kl_want, mut w2) = (0.0, 0.0);
    for j in 0..4 {
        let ((m1, v1), (m2, v2)) = (fit(&zs, j), fit(&zy, j));
        kl_want += 0.5 * (v1 / v2 + (m2 - m1).powi(2) / v2 - 1.0 + (v2 / v1).ln());
        w2 += (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
    }
    let (kl, wass) = gaussian_divergences(zs.view(), zy.view()).unwrap();
    assert!((kl - kl_want).abs() <= 1e-8);
    assert!((wass - w2.sqrt()).abs() <= 1e-8);
    // constant columns are floored rather than divided by zero
    let flat = Array2::from_elem((5, 2), 1.0);
    assert!(gaussian_divergences(flat.view(), zs.slice(ndarray::s![.., ..2])).unwrap().0.is_finite());
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn bleu_and_exact_match_by_hand() {
    let same = vec![(toks("a b c d e"), toks("a b c d e")), (toks("x y"), toks("x y"))];
    assert_eq!(exact_match(&same), 1.0);
    assert!((corpus_bleu(&same) - 1.0).abs() < 1e-15);
    let disjoint = vec![(toks("a b c"), toks("x y z"))];
    assert_eq!((exact_match(&disjoint), corpus_bleu(&disjoint)), (0.0, 0.0));

    // precisions 5/6, 3/5, 2/4, 1/3 and equal lengths
    let pair = vec![(toks("the cat sat on the mat"), toks("the cat sat on a mat"))];
    let want = (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
    assert!((corpus_bleu(&pair) - want).abs() < 1e-12);

    // one of two bigrams matches; the lone trigram cannot, so unsmoothed BLEU is 0
    let pair = vec![(toks("a b c"), toks("a b d"))];
    assert_eq!(corpus_bleu(&pair), 0.0);

    // short hypothesis: only orders 1 and 2 exist, both perfect; BP = e^(1 − 4/2)
    let pair = vec![(toks("a b c d"), toks("a b"))];
    assert!((corpus_bleu(&pair) - (-1.0f64).exp()).abs() < 1e-12);

    let empty = vec![(toks("a b"), vec![])];
    assert_eq!(corpus_bleu(&empty), 0.0);
    let m = reconstruction_metrics(&same, 7.0f64.ln() * 4.0, 4).unwrap();
    assert!((m.ppl - 7.0).abs() < 1e-12);
    assert!(reconstruction_metrics::<String>(&[], 0.0, 0).is_err());
}

#[test]
fn ou_walk_properties() {
    let mut r = rng(7);
    let z = vec![0.3, -1.2, 2.0];
    assert_eq!(ou_step(&z, -1.0, 0.0, &mut r), z);
    assert!(ou_step(&z, 0.0, 0.0, &mut r).iter().all(|&v| v == 0.0));

    // z' = 0.5 z + 0.1 W has stationary variance 0.01 / 0.75
    let mut x = vec![0.0];
    for _ in 0..1000 {
        x = ou_step(&x, -0.5, 0.1, &mut r);
    }
    let n = 100_000;
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        x = ou_step(&x, -0.5, 0.1, &mut r);
        xs.push(x[0]);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let want = 0.01 / 0.75;
    assert!((var / want - 1.0).abs() <= 0.05, "{var} vs {want}");

    let d = [3.0, 4.0];
    let moved = at_radius(&[1.0, 1.0], &d, 2.0);
    assert!((moved[0] - 2.2).abs() < 1e-12 && (moved[1] - 2.6).abs() < 1e-12);
    assert_eq!(at_radius(&[1.0, 1.0], &d, 0.0), vec![1.0, 1.0]);
}

#[test]
fn projection_cases() {
    // collinear points
    let t = [-2.0, -1.0, 0.5, 1.0, 3.0];
    let line = Array2::from_shape_fn((5, 3), |(i, j)| [1.0, 2.0, -1.0][j] * t[i] + 0.5);
    let p = pca_2d(line.view()).unwrap();
    assert!(p.column(1).iter().map(|v| v * v).sum::<f64>() / 5.0 <= 1e-8);

    let mut r = rng(8);
    let x = normal_matrix(&mut r, 20, 4);
    let labels: Vec<String> = (0..20).map(|i| format!("d{}", i % 3)).collect();
    let text = export_projection_2d(x.view(), &labels).unwrap();
    let (back, l2) = read_projection(&text).unwrap();
    assert_eq!(back, pca_2d(x.view()).unwrap());
    assert_eq!(l2, labels);
    assert_eq!(pca_2d(x.view()).unwrap(), pca_2d(x.view()).unwrap());
    assert!(pca_2d(x.slice(ndarray::s![..2, ..])).is_err());
}

#[test]
fn projection_keeps_blob_centroid_order() {
    let mut r = rng(9);
    // three blobs in 6-D whose centres span a plane
    let centres = [[0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 4.0, 0.0, 0.0, 0.0], [0.0, 25.0, 0.0, 0.0, 3.0, 0.0]];
    let per = 40;
    let x = Array2::from_shape_fn((3 * per, 6), |(i, j)| {
        let noise: f64 = StandardNormal.sample(&mut r);
        centres[i / per][j] + 0.3 * noise
    });
    let p = pca_2d(x.view()).unwrap();
    let centroid = |m: &Array2<f64>, b: usize| m.slice(ndarray::s![b * per..(b + 1) * per, ..]).mean_axis(Axis(0)).unwrap();
    let dist = |m: &Array2<f64>, a: usize, b: usize| (&centroid(m, a) - &centroid(m, b)).mapv(|v| v * v).sum().sqrt();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let order = |m: &Array2<f64>| {
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|&a, &b| dist(m, pairs[a].0, pairs[a].1).total_cmp(&dist(m, pairs[b].0, pairs[b].1)));
        idx
    };
    assert_eq!(order(&x), order(&p));
}

#[test]
fn derivation_probe_cases() {
    let n = 400;
    let ops: Vec<Operation> = (0..n).map(|i| Operation::ALL[i % 4]).collect();
    let onehot = Array2::from_shape_fn((n, 4), |(i, j)| if i % 4 == j { 1.0 } else { 0.0 });
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let s = derivation_probes(onehot.view(), &ops, onehot.view(), &labels, 0).unwrap();
    assert_eq!((s.op_acc, s.op_f1), (1.0, 1.0));

    // positives and negatives share features
    let mut r = rng(10);
    let feats = normal_matrix(&mut r, 500, 3);
    let both = ndarray::concatenate![Axis(0), feats, feats];
    let lab: Vec<bool> = (0..1000).map(|i| i < 500).collect();
    let s = derivation_probes(onehot.view(), &ops, both.view(), &lab, 1).unwrap();
    assert!((s.concl_acc - 0.5).abs() <= 0.1, "{}", s.concl_acc);

    let skewed: Vec<bool> = (0..n).map(|i| i % 12 == 0).collect();
    assert!(derivation_probes(onehot.view(), &ops, onehot.view(), &skewed, 0).is_err());

    let partners = negative_partners(50, 3);
    assert!(partners.iter().enumerate().all(|(i, &j)| i != j && j < 50));
    let pairs = generate_derivation_pairs(5, 3, 40, 2);
    assert_eq!(pairs.len(), 20);
    assert!(pairs.iter().all(|p| p.premise != p.conclusion));
}

fn report() -> EvalReport {
    let mut r = EvalReport::default();
    for k in REPORT_KEYS {
        r.metrics.insert(k.into(), if k == "ppl" { 3.0 } else { 0.5 });
    }
    r
}

#[test]
fn report_validation() {
    let r = report();
    assert!(r.validate().is_ok());
    assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    assert!(r.metrics_csv().starts_with("metric,value\n"));
    let mut bad = r.clone();
    bad.metrics.insert("em".into(), 1.5);
    assert!(bad.validate().is_err());
    let mut bad = r.clone();
    bad.metrics.insert("ppl".into(), 0.5);
    assert!(bad.validate().is_err());
    let mut bad = r.clone();
    bad.metrics.insert("wass_sem_syn".into(), -0.1);
    assert!(bad.validate().is_err());
    let mut bad = r;
    bad.metrics.remove("mi_sem_syn");
    assert_eq!(bad.missing_keys(), ["mi_sem_syn"]);
    assert!(bad.validate().is_err());
}

fn tiny_model(dual: bool) -> (Model, synsem::corpus::Splits) {
    let splits = generate_math_corpus(&CorpusConfig { n_train: 40, n_test: 12, ..CorpusConfig::default() }, 1);
    let mut c = ModelConfig::default();
    c.encoder.d_model = 16;
    c.encoder.n_heads = 2;
    c.encoder.d_ff = 16;
    c.encoder.d_z = 8;
    c.encoder.graph_hidden = 8;
    c.decoder.d_model = 16;
    c.decoder.n_heads = 2;
    c.decoder.d_head = 8;
    c.decoder.d_ff = 16;
    c.decoder.max_len = 24;
    if !dual {
        c.encoder.mode = synsem::encoders::EncoderMode::Single;
        c.decoder.scheme = synsem::decoder::InjectionScheme::memory();
    }
    let m = Model::new(c, Vocabulary::math(), tree_vocabulary(TokenMode::Math, &splits.train), 2).unwrap();
    (m, splits)
}

#[test]
fn traversal_harness_on_an_untrained_model() {
    let (m, splits) = tiny_model(true);
    let inputs = &splits.eval[..6];
    let cfg = TraversalConfig { radii: vec![0.0, 0.2, 0.4, 0.6], seed: 3, ..TraversalConfig::default() };
    let curve = traversal_experiment(&m, inputs, &cfg).unwrap();
    assert_eq!(curve.iter().map(|p| p.radius).collect::<Vec<_>>(), cfg.radii);
    assert!(curve.iter().all(|p| p.n == inputs.len() && p.mean_ted >= 0.0 && p.unparsed <= p.n));
    assert_eq!(curve, traversal_experiment(&m, inputs, &cfg).unwrap());

    // radius 0 is plain reconstruction from the posterior means
    let mut total = 0.0;
    for (i, rec) in inputs.iter().enumerate() {
        let input = m.prepare(rec).unwrap();
        let lat = m.encode_mean(&input, NoiseSeeds::new(synsem::model::mix(3, i as u64))).unwrap();
        let text = m.decode_text(&m.generate(&lat).unwrap());
        let hyp = generated_syntax(&text).unwrap_or_else(fallback_tree);
        total += tree_edit_distance(&strip_word_content(&rec.tree), &hyp) as f64;
    }
    assert!((curve[0].mean_ted - total / inputs.len() as f64).abs() < 1e-12);
    assert!(traversal_csv(&curve).starts_with("radius,mean_ted,n\n"));
}

#[test]
fn evaluation_report_is_complete() {
    for dual in [true, false] {
        let (m, splits) = tiny_model(dual);
        let cfg = EvalConfig { traversal_inputs: 4, probe_pairs_per_op: 10, ..EvalConfig::default() };
        let rep = evaluate(&m, &splits, &cfg).unwrap();
        assert!(rep.missing_keys().is_empty());
        rep.validate().unwrap();
        assert_eq!(rep.traversal.len(), 4);
        assert!(rep.probes.is_some());
        assert!(rep.metrics.contains_key("em_var"));
        let dump = latent_dump(&m, &splits.eval, 0).unwrap();
        assert_eq!(dump.z_sem.dim(), dump.z_syn.dim());
        dump.validate().unwrap();
    }
}

#[test]
fn self_consistency() {
    let s = vec![(toks("x + y"), toks("x + y"))];
    assert_eq!(exact_match(&s), 1.0);
    assert_eq!(corpus_bleu(&s), 1.0);
    let t = synsem::corpus::generate_math_expression(4, 3);
    assert_eq!(tree_edit_distance(&t, &t), 0);
    let mut r = rng(11);
    let p = normal_matrix(&mut r, 30, 3);
    assert_eq!(gaussian_divergences(p.view(), p.view()).unwrap(), (0.0, 0.0));
}
