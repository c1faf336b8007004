use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use synsem::corpus::io::split_file_name;
use synsem::corpus::SplitTag;
use synsem::evaluation::{EvalReport, REPORT_KEYS};
use synsem::training::TrainConfig;

fn synsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synsem")).args(args).env_remove("SYNSEM_RUN_ROOT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifests(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A small model so that training runs in a few seconds.
fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let mut c = TrainConfig::default();
    c.epochs = 2;
    c.batch_size = 16;
    let (e, d) = (&mut c.model.encoder, &mut c.model.decoder);
    e.d_model = 16;
    e.n_heads = 2;
    e.d_ff = 32;
    e.d_z = 8;
    e.graph_hidden = 8;
    d.d_model = 16;
    d.n_heads = 2;
    d.d_head = 8;
    d.d_ff = 32;
    let path = dir.join("smoke.toml");
    fs::write(&path, toml::to_string(&c).unwrap()).unwrap();
    path
}

fn generate(out: &Path, n: &str, seed: &str) {
    let o = synsem(&["generate-corpus", "--kind", "math", "--n", n, "--n-test", "10", "--seed", seed, "--out", p(out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_corpus_files_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, "100", "0");
    generate(&b, "100", "0");
    for tag in SplitTag::ALL {
        let name = split_file_name(tag);
        let bytes = fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes, fs::read(b.join(&name)).unwrap(), "{name}");
        let lines = String::from_utf8(bytes).unwrap().lines().count();
        let want = if tag == SplitTag::Train { 100 } else { 10 };
        assert_eq!(lines, want + 1, "{name}");
    }
    assert_eq!(fs::read(a.join("vocab.txt")).unwrap(), fs::read(b.join("vocab.txt")).unwrap());
    let m = manifests(&a);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["command"], "generate-corpus");
    assert_eq!(m[0]["outputs"].as_array().unwrap().len(), SplitTag::ALL.len() + 1);
    assert_eq!(m[0]["config"]["corpus"]["n_train"], 100);

    let empty = tmp.path().join("empty");
    generate(&empty, "0", "0");
    let train = fs::read_to_string(empty.join(split_file_name(SplitTag::Train))).unwrap();
    assert_eq!(train.lines().count(), 1);

    generate(&a, "100", "0");
    assert_eq!(manifests(&a).len(), 2);
}

#[test]
fn usage_and_io_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&synsem(&["generate-corpus", "--kind", "latin"])), 2);
    assert_eq!(code(&synsem(&["frobnicate"])), 2);
    let o = synsem(&["train", "--corpus", p(&tmp.path().join("nope")), "--out", p(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = synsem(&["generate-corpus", "--leaf-prob", "1.5", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 2);

    // the output path is a file, so the run directory cannot be created
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = synsem(&["generate-corpus", "--n", "5", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_evaluate_traverse_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    generate(&corpus, "50", "1");
    let cfg = smoke_config(tmp.path());
    let run = tmp.path().join("run");
    let o = synsem(&[
        "train", "--corpus", p(&corpus), "--config", p(&cfg), "--scheme", "addition_QKV", "--seed", "1", "--out", p(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(run.join("epochs.jsonl")).unwrap().lines().count(), 2);
    assert!(run.join("config.toml").exists() && run.join("final.ckpt").exists());
    let m = manifests(&run);
    assert_eq!(m[0]["config"]["scheme"], "addition_QKV");
    assert!(m[0]["config"]["train"]["model"]["decoder"]["scheme"].is_object());
    let snapshot: TrainConfig = toml::from_str(&fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(snapshot.model.decoder.scheme.to_string(), "addition_QKV");

    let ckpt = run.join("final.ckpt");
    let eval_args = |out: &Path| {
        synsem(&[
            "evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--traversal-inputs", "4", "--probe-pairs", "10",
            "--seed", "2", "--out", p(out),
        ])
    };
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    assert_eq!(code(&eval_args(&e1)), 0);
    assert_eq!(code(&eval_args(&e2)), 0);
    let r1 = fs::read_to_string(e1.join("report.json")).unwrap();
    assert_eq!(r1, fs::read_to_string(e2.join("report.json")).unwrap());
    let report = EvalReport::from_json(&r1).unwrap();
    for k in REPORT_KEYS {
        assert!(report.metrics.contains_key(k), "{k}");
    }
    for f in ["metrics.csv", "projection_sem.csv", "projection_syn.csv"] {
        assert!(e1.join(f).exists(), "{f}");
    }

    let tr = tmp.path().join("tr");
    let o = synsem(&[
        "traverse", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--radii", "0,0.5", "--inputs", "5", "--out", p(&tr),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tr.join("traversal.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,"));

    let pr = tmp.path().join("pr");
    let o = synsem(&["probe", "--checkpoint", p(&ckpt), "--pairs-per-op", "10", "--out", p(&pr)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let probes: Value = serde_json::from_str(&fs::read_to_string(pr.join("probes.json")).unwrap()).unwrap();
    assert!(probes["op_acc"].as_f64().is_some());

    let at = tmp.path().join("at");
    let o = synsem(&["export-attention", "--checkpoint", p(&ckpt), "--text", "x + 1", "--out", p(&at)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(at.join("attention_l0_h0.csv").exists());

    // a natural-language corpus does not belong to a math checkpoint
    let natural = tmp.path().join("natural");
    let o = synsem(&["generate-corpus", "--kind", "natural", "--n", "10", "--out", p(&natural)]);
    assert_eq!(code(&o), 0);
    let o = synsem(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&natural), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 4);

    let broken = tmp.path().join("broken.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    let o = synsem(&["traverse", "--checkpoint", p(&broken), "--corpus", p(&corpus), "--out", p(&tmp.path().join("y"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    generate(&corpus, "20", "0");
    let cfg = smoke_config(tmp.path());
    let run = tmp.path().join("run");
    let o = synsem(&["train", "--corpus", p(&corpus), "--config", p(&cfg), "--lr", "1e300", "--out", p(&run)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
    assert!(manifests(&run)[0]["config"]["diverged"].is_string());
}

#[test]
fn run_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_synsem"))
        .args(["generate-corpus", "--n", "3", "--n-test", "1"])
        .env("SYNSEM_RUN_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join(split_file_name(SplitTag::Train)).exists());
}
