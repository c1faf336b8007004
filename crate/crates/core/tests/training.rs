mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use synsem::corpus::{generate_math_corpus, CorpusConfig, TokenMode, Vocabulary};
use synsem::decoder::InjectionScheme;
use synsem::encoders::{DualLatent, EncoderInput, EncoderMode, LatentGaussian};
use synsem::model::{tree_vocabulary, Model, ModelConfig, NoiseSeeds};
use synsem::params::ParamStore;
use synsem::training::checkpoint::{decode_checkpoint, encode_checkpoint, manifest_for};
use synsem::training::*;

fn config(mode: EncoderMode, scheme: InjectionScheme) -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.mode = mode;
    c.encoder.d_model = 16;
    c.encoder.n_heads = 2;
    c.encoder.d_ff = 32;
    c.encoder.d_z = 16;
    c.encoder.graph_hidden = 16;
    c.decoder.d_model = 16;
    c.decoder.n_heads = 2;
    c.decoder.d_head = 8;
    c.decoder.d_ff = 32;
    c.decoder.scheme = scheme;
    c
}

fn setup(mode: EncoderMode, scheme: InjectionScheme, n: usize) -> (Model, Vec<EncoderInput>) {
    let splits = generate_math_corpus(&CorpusConfig { n_train: n, n_test: 2, ..CorpusConfig::default() }, 3);
    let tv = tree_vocabulary(TokenMode::Math, &splits.train);
    let m = Model::new(config(mode, scheme), Vocabulary::math(), tv, 1).unwrap();
    let inputs = splits.train.iter().map(|r| m.prepare(r).unwrap()).collect();
    (m, inputs)
}

fn gaussian(mu: Vec<f64>, logvar: Vec<f64>) -> LatentGaussian {
    LatentGaussian { sample: mu.clone(), mu, logvar }
}

#[test]
fn kl_closed_form_matches_monte_carlo() {
    let mut r = rng(10);
    let mu = random_vec(&mut r, 8);
    let logvar = random_vec(&mut r, 8);
    // E_q[log q(z) − log p(z)] with z ~ q
    let n = 1_000_000;
    let mut total = 0.0;
    for _ in 0..n {
        let mut s = 0.0;
        for (m, lv) in mu.iter().zip(&logvar) {
            let e: f64 = StandardNormal.sample(&mut r);
            let z = m + (lv / 2.0).exp() * e;
            s += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        total += s;
    }
    let mc = total / n as f64;
    let closed = kl_gaussian(&mu, &logvar);
    assert!(closed >= 0.0);
    assert!((closed - mc).abs() <= 1e-2, "closed {closed} mc {mc}");
}

#[test]
fn kl_threshold_cases() {
    assert_eq!(kl_threshold(0.2, 0.5), 0.5);
    assert_eq!(kl_threshold(0.8, 0.5), 0.8);
    assert_eq!(kl_threshold(0.3, 0.0), 0.3);
}

#[test]
fn beta_schedule_sweep() {
    for (total, cycles, ramp) in [(100, 4, 0.5), (97, 3, 0.25), (1000, 4, 1.0), (10, 1, 0.5)] {
        let period = total as f64 / cycles as f64;
        let mut prev = (usize::MAX, -1.0);
        for step in 0..total {
            let b = cyclical_beta(step, total, cycles, ramp);
            assert!((0.0..=1.0).contains(&b));
            let cycle = (step as f64 / period) as usize;
            if cycle == prev.0 {
                assert!(b >= prev.1, "step {step}");
            }
            prev = (cycle, b);
        }
        // with a full-length ramp the last step sits one increment short of 1
        for c in (1..=cycles).filter(|_| ramp < 1.0) {
            let last = (c as f64 * period).ceil() as usize - 1;
            assert_eq!(cyclical_beta(last, total, cycles, ramp), 1.0, "cycle {c}");
        }
    }
    // a quarter of the way into a cycle, halfway up the ramp
    assert!((cyclical_beta(125, 400, 4, 0.5) - 0.5).abs() < 1e-12);
    assert_eq!(cyclical_beta(0, 400, 4, 0.5), 0.0);
    assert_eq!(cyclical_beta(5000, 100, 4, 0.5), 1.0);
}

#[test]
fn loss_composition_cases() {
    let lat = DualLatent { sem: gaussian(vec![1.0, 0.5], vec![0.2, -0.3]), syn: Some(gaussian(vec![0.3], vec![0.1])) };
    let b = vae_loss(&lat, 3.0, 0.7, 0.0, 0.5).unwrap();
    assert!((b.total - 3.7).abs() < 1e-15);
    let tiny = DualLatent { sem: gaussian(vec![0.01], vec![0.0]), syn: Some(gaussian(vec![0.02], vec![0.0])) };
    let b = vae_loss(&tiny, 3.0, 0.7, 1.0, 0.5).unwrap();
    assert!((b.total - (3.0 + 1.0 + 0.7)).abs() < 1e-15);
    let single = DualLatent { sem: gaussian(vec![0.4, 0.1], vec![0.0, 0.0]), syn: None };
    let b = vae_loss(&single, 1.0, 0.0, 1.0, 0.0).unwrap();
    assert_eq!(b.kl_syn, 0.0);
    assert!(vae_loss(&single, f64::NAN, 0.0, 1.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn loss_recomposes(seed in any::<u64>(), beta in 0.0f64..1.0, lambda in 0.0f64..3.0, nll in 0.0f64..50.0, aux in 0.0f64..5.0) {
        let mut r = rng(seed);
        let (ms, ls, my, ly) = (random_vec(&mut r, 4), random_vec(&mut r, 4), random_vec(&mut r, 4), random_vec(&mut r, 4));
        let kl = |m: &[f64], l: &[f64]| m.iter().zip(l).map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l)).sum::<f64>();
        let want = nll + beta * kl(&ms, &ls).max(lambda) + beta * kl(&my, &ly).max(lambda) + aux;
        let lat = DualLatent { sem: gaussian(ms, ls), syn: Some(gaussian(my, ly)) };
        let b = vae_loss(&lat, nll, aux, beta, lambda).unwrap();
        prop_assert!((b.total - want).abs() <= 1e-12);
        prop_assert!((b.compose() - b.total).abs() <= 1e-12);
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), arrays in 1usize..6, step in any::<u64>()) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        for i in 0..arrays {
            let (rows, cols) = (1 + i % 3, 1 + (seed as usize + i) % 5);
            let mut m = random_matrix(&mut r, rows, cols);
            m[[0, 0]] = [f64::MIN_POSITIVE, -0.0, 1e300, f64::EPSILON, 7.0][i % 5];
            store.insert(format!("p{i}.w"), m);
        }
        let manifest = CheckpointManifest {
            config: ModelConfig::default(),
            vocab: vec!["a".into(), "b".into()],
            tree_vocab: vec!["(".into()],
            seed,
            step,
            epoch: 3,
        };
        let (m2, s2) = checkpoint_roundtrip(&manifest, &store).unwrap();
        prop_assert_eq!(m2, manifest);
        prop_assert_eq!(s2.len(), store.len());
        for ((n1, a), (n2, b)) in store.iter().zip(s2.iter()) {
            prop_assert_eq!(n1, n2);
            let bits = |x: &Array2<f64>| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (m, _) = setup(EncoderMode::Single, InjectionScheme::memory(), 4);
    let bytes = encode_checkpoint(&manifest_for(&m, 1, 2, 3), &m.store).unwrap();
    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "prefix {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(decode_checkpoint(&wrong), Err(synsem::Error::Checkpoint(_))));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&path, &m, 1, 2, 3).unwrap();
    let (back, manifest) = load_model(&path).unwrap();
    assert_eq!((manifest.seed, manifest.step, manifest.epoch), (1, 2, 3));
    assert_eq!(back.store, m.store);
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn overfits_one_sample() {
    let (m, inputs) = setup(EncoderMode::Single, InjectionScheme::memory(), 1);
    let cfg = TrainConfig { batch_size: 1, epochs: 300, model: m.config.clone(), ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg, m, 1).unwrap();
    let batch = [(&inputs[0], NoiseSeeds::new(0))];
    let (first, _) = trainer.train_step(&batch).unwrap();
    let initial = first[0].reconstruction_nll;
    let mut last = initial;
    for s in 1..300 {
        let (p, _) = trainer.train_step(&[(&inputs[0], NoiseSeeds::new(s))]).unwrap();
        for b in &p {
            assert!((b.compose() - b.total).abs() <= 1e-10);
        }
        last = p[0].reconstruction_nll;
    }
    assert!(last < 0.1 * initial, "nll {initial} -> {last}");
}

#[test]
fn equal_seeds_give_identical_logs() {
    let (m, inputs) = setup(EncoderMode::DualGraph, InjectionScheme::addition_qkv(), 12);
    let cfg = TrainConfig { batch_size: 4, epochs: 2, model: m.config.clone(), ..TrainConfig::default() };
    let run = || {
        let out = train_loop(&cfg, m.clone(), &inputs, |_, _, _| Ok(())).unwrap();
        (serde_json::to_string(&out.log).unwrap(), out.model.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn parallel_and_sequential_gradients_agree() {
    let (m, inputs) = setup(EncoderMode::MultitaskVgae, InjectionScheme::fusion_qkv(), 6);
    let batch: Vec<_> = inputs.iter().enumerate().map(|(i, x)| (x, NoiseSeeds::new(i as u64))).collect();
    let w = LossWeights::new(0.5, 0.1);
    let (ga, pa) = batch_gradients(&m, &batch, w, true).unwrap();
    let (gb, pb) = batch_gradients(&m, &batch, w, false).unwrap();
    assert_eq!(pa, pb);
    for id in m.store.ids() {
        assert_eq!(ga.get(id), gb.get(id));
    }
}

#[test]
fn floored_kl_contributes_no_gradient() {
    for (mode, scheme) in [
        (EncoderMode::DualGraph, InjectionScheme::addition_qkv()),
        (EncoderMode::Single, InjectionScheme::memory()),
    ] {
        let (m, inputs) = setup(mode, scheme, 2);
        let seeds = NoiseSeeds::new(4);
        let (floored, b) = sample_gradients(&m, &inputs[0], seeds, LossWeights::new(1.0, 1e9)).unwrap();
        let (plain, _) = sample_gradients(&m, &inputs[0], seeds, LossWeights::new(0.0, 0.0)).unwrap();
        assert!(b.kl_sem < 1e9 && b.kl_syn < 1e9);
        for id in m.store.ids() {
            assert_eq!(floored.get(id), plain.get(id), "{}", m.store.name(id));
        }
    }
}

#[test]
fn config_invariants() {
    assert!(TrainConfig { lambda_threshold: -1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { ramp_proportion: 1.5, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let text = toml::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), TrainConfig::default());
}

#[test]
fn cosine_schedule_endpoints() {
    let s = LrSchedule::Cosine;
    assert_eq!(s.rate(2e-3, 0, 100), 2e-3);
    assert!((s.rate(2e-3, 50, 100) - 1e-3).abs() < 1e-15);
    assert!(s.rate(2e-3, 100, 100).abs() < 1e-18);
    assert!((1..100).all(|t| s.rate(1.0, t, 100) < s.rate(1.0, t - 1, 100)));
    assert_eq!(LrSchedule::Constant.rate(2e-3, 77, 100), 2e-3);
}
