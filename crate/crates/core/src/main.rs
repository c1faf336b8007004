use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use synsem::corpus::io::{read_corpus, split_file_name, write_corpus, CorpusHeader, CORPUS_FORMAT};
use synsem::corpus::{
    generate_math_corpus, generate_natural_corpus, tokenize, CorpusConfig, SplitTag, Splits, TokenMode, Vocabulary,
};
use synsem::decoder::{attention_heatmap, heatmap_to_csv, InjectionScheme};
use synsem::encoders::EncoderMode;
use synsem::evaluation::traversal::{traversal_csv, traversal_experiment, TraversalConfig};
use synsem::evaluation::{derivation_scores, evaluate, latent_dump, projection_csv, EvalConfig};
use synsem::model::{mix, surface_vocabulary, tree_vocabulary, Model, NoiseSeeds};
use synsem::training::checkpoint::{load_model, save_model};
use synsem::training::{train_loop, TrainConfig};
use synsem::{Error, Result};

const RUN_ROOT_ENV: &str = "SYNSEM_RUN_ROOT";
const VOCAB_FILE: &str = "vocab.txt";

#[derive(Parser)]
#[command(name = "synsem", version, about = "Syntax/semantics separated transformer VAE")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to $SYNSEM_RUN_ROOT, then `runs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the five generalisation splits plus TRAIN and the vocabulary.
    GenerateCorpus(GenerateArgs),
    /// Writes config.toml, epochs.jsonl and best/final checkpoints.
    Train(TrainArgs),
    /// Writes report.json, metrics.csv and 2-D projections.
    Evaluate(EvalArgs),
    /// Writes traversal.csv.
    Traverse(TraverseArgs),
    /// Writes probes.json with the derivation probe scores.
    Probe(ProbeArgs),
    /// Writes one attention CSV per layer and head for one input.
    ExportAttention(AttentionArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Math,
    Natural,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Kind::Math)]
    kind: Kind,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    leaf_prob: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// TOML training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ck: CheckpointArgs,
    #[arg(long)]
    traversal_inputs: Option<usize>,
    #[arg(long)]
    probe_pairs: Option<usize>,
}

#[derive(Args)]
struct TraverseArgs {
    #[command(flatten)]
    ck: CheckpointArgs,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    inputs: usize,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pairs_per_op: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input expression or sentence, in the checkpoint's token mode.
    #[arg(long)]
    text: String,
}

/// A command that fails before doing any work because of its arguments.
struct Usage(String);

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => 3,
        Error::Mismatch(_) | Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: Value,
    seed: u64,
    version: &'a str,
    started: u64,
    finished: u64,
    outputs: Vec<String>,
}

struct Run {
    out: PathBuf,
    seed: u64,
    started: u64,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: PathBuf, seed: u64) -> Result<Self> {
        fs::create_dir_all(&out)?;
        Ok(Self { out, seed, started: now(), outputs: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.path(name), contents)?;
        self.record(name);
        Ok(())
    }

    fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    /// Appends one line to the directory's manifest.
    fn finish(self, command: &str, config: Value) -> Result<()> {
        let m = RunManifest {
            command,
            config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            started: self.started,
            finished: now(),
            outputs: self.outputs,
        };
        let mut f = OpenOptions::new().create(true).append(true).open(self.out.join("manifest.jsonl"))?;
        serde_json::to_writer(&mut f, &m)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

fn require(path: &Path, what: &str) -> std::result::Result<(), Usage> {
    if path.exists() {
        Ok(())
    } else {
        Err(Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_splits(dir: &Path) -> Result<(TokenMode, Splits)> {
    let mut splits = Splits::default();
    let mut kind = None;
    for tag in SplitTag::ALL {
        let p = dir.join(split_file_name(tag));
        if !p.exists() {
            continue;
        }
        let (header, records) = read_corpus(&p)?;
        if kind.is_some_and(|k| k != header.kind) {
            return Err(Error::Mismatch(format!("{} mixes corpus kinds", dir.display())));
        }
        kind = Some(header.kind);
        *splits.get_mut(tag) = records;
    }
    let kind = kind.ok_or_else(|| Error::Missing(format!("no split files in {}", dir.display())))?;
    Ok((kind, splits))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn cmd_generate(cli: &Cli, out: PathBuf, a: &GenerateArgs) -> std::result::Result<(), Failure> {
    let d = CorpusConfig::default();
    let cfg = CorpusConfig {
        n_train: a.n,
        n_test: a.n_test.unwrap_or(d.n_test),
        max_depth: a.max_depth.unwrap_or(d.max_depth),
        leaf_prob: a.leaf_prob.unwrap_or(d.leaf_prob),
        ..d
    };
    if !(0.0..=1.0).contains(&cfg.leaf_prob) {
        return Err(Usage(format!("--leaf-prob {} outside [0, 1]", cfg.leaf_prob)).into());
    }
    let (mode, splits) = match a.kind {
        Kind::Math => (TokenMode::Math, generate_math_corpus(&cfg, cli.seed)),
        Kind::Natural => (TokenMode::Natural, generate_natural_corpus(&cfg, cli.seed)),
    };
    let mut run = Run::new(out, cli.seed)?;
    for tag in SplitTag::ALL {
        let records = splits.get(tag);
        // natural corpora have no generalisation splits
        if mode == TokenMode::Math || !records.is_empty() {
            let header = CorpusHeader {
                format: CORPUS_FORMAT.into(),
                version: 1,
                kind: mode,
                split: tag,
                seed: cli.seed,
                n: records.len(),
            };
            let name = split_file_name(tag);
            write_corpus(&run.path(&name), &header, records)?;
            run.record(&name);
        }
    }
    surface_vocabulary(mode, &splits.train).save(&run.path(VOCAB_FILE))?;
    run.record(VOCAB_FILE);
    run.finish("generate-corpus", json!({ "kind": mode, "corpus": to_json(&cfg) }))?;
    Ok(())
}

fn cmd_train(cli: &Cli, out: PathBuf, a: &TrainArgs) -> std::result::Result<(), Failure> {
    require(&a.corpus, "corpus")?;
    let mut cfg = match &a.config {
        Some(p) => {
            require(p, "config")?;
            toml::from_str(&fs::read_to_string(p).map_err(Error::from)?)
                .map_err(|e| Usage(format!("bad config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.model.encoder.mode = m.parse::<EncoderMode>().map_err(|e| Usage(e.to_string()))?;
    }
    if let Some(s) = &a.scheme {
        cfg.model.decoder.scheme = s.parse::<InjectionScheme>().map_err(|e| Usage(e.to_string()))?;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    cfg.lambda_threshold = a.lambda.unwrap_or(cfg.lambda_threshold);
    cfg.seed = cli.seed;
    cfg.validate().map_err(|e| Usage(e.to_string()))?;

    let (mode, splits) = load_splits(&a.corpus)?;
    cfg.model.token_mode = mode;
    let vocab = Vocabulary::load(&a.corpus.join(VOCAB_FILE))?;
    let model = Model::new(cfg.model.clone(), vocab, tree_vocabulary(mode, &splits.train), cli.seed)?;
    let inputs = splits.train.iter().map(|r| model.prepare(r)).collect::<Result<Vec<_>>>()?;

    let mut run = Run::new(out, cli.seed)?;
    run.write("config.toml", toml::to_string(&cfg).map_err(|e| Error::Invalid(e.to_string()))?)?;
    let log_path = run.path("epochs.jsonl");
    let mut log = fs::File::create(&log_path).map_err(Error::from)?;
    let best_path = run.path("best.ckpt");
    let outcome = train_loop(&cfg, model, &inputs, |e, m, is_best| {
        serde_json::to_writer(&mut log, e)?;
        log.write_all(b"\n")?;
        eprintln!("epoch {} loss {:.4} nll {:.4} kl_sem {:.3}", e.epoch, e.loss.total, e.loss.reconstruction_nll, e.loss.kl_sem);
        if is_best {
            save_model(&best_path, m, cli.seed, e.step, e.epoch)?;
        }
        Ok(())
    })?;
    run.record("epochs.jsonl");
    if outcome.best_epoch.is_some() {
        run.record("best.ckpt");
    }
    let last = outcome.log.last().map_or((0, 0), |l| (l.step, l.epoch));
    save_model(&run.path("final.ckpt"), &outcome.model, cli.seed, last.0, last.1)?;
    run.record("final.ckpt");
    run.finish(
        "train",
        json!({
            "corpus": a.corpus.display().to_string(),
            "train": to_json(&cfg),
            "scheme": cfg.model.decoder.scheme.to_string(),
            "diverged": outcome.diverged,
        }),
    )?;
    match outcome.diverged {
        Some(msg) => Err(Error::Divergence(msg).into()),
        None => Ok(()),
    }
}

/// Loads a checkpoint and a corpus and checks that they belong together.
fn load_pair(ck: &CheckpointArgs) -> std::result::Result<(Model, Splits), Failure> {
    require(&ck.checkpoint, "checkpoint")?;
    require(&ck.corpus, "corpus")?;
    let (model, _) = load_model(&ck.checkpoint)?;
    let (mode, splits) = load_splits(&ck.corpus)?;
    if mode != model.config.token_mode {
        return Err(Error::Mismatch(format!("{mode:?} corpus for a {:?} checkpoint", model.config.token_mode)).into());
    }
    let vocab_path = ck.corpus.join(VOCAB_FILE);
    if vocab_path.exists() && Vocabulary::load(&vocab_path)? != model.vocab {
        return Err(Error::Mismatch("corpus vocabulary differs from the checkpoint's".into()).into());
    }
    for r in splits.all() {
        tokenize(&r.text, &model.vocab, mode).map_err(|e| Error::Mismatch(e.to_string()))?;
    }
    Ok((model, splits))
}

fn cmd_evaluate(cli: &Cli, out: PathBuf, a: &EvalArgs) -> std::result::Result<(), Failure> {
    let (model, splits) = load_pair(&a.ck)?;
    let d = EvalConfig::default();
    let cfg = EvalConfig {
        seed: cli.seed,
        traversal_inputs: a.traversal_inputs.unwrap_or(d.traversal_inputs),
        probe_pairs_per_op: a.probe_pairs.unwrap_or(d.probe_pairs_per_op),
        traversal: TraversalConfig { seed: cli.seed, ..d.traversal.clone() },
        ..d
    };
    let report = evaluate(&model, &splits, &cfg)?;
    let mut run = Run::new(out, cli.seed)?;
    run.write("report.json", report.to_json()?)?;
    run.write("metrics.csv", report.metrics_csv())?;
    let geometry = if splits.eval.is_empty() { &splits.train } else { &splits.eval };
    let dump = latent_dump(&model, geometry, cli.seed)?;
    run.write("projection_sem.csv", projection_csv(dump.z_sem.view(), &dump.depth)?)?;
    run.write("projection_syn.csv", projection_csv(dump.z_syn.view(), &dump.depth)?)?;
    run.finish("evaluate", json!({ "checkpoint": a.ck.checkpoint.display().to_string(), "eval": to_json(&cfg) }))?;
    Ok(())
}

fn cmd_traverse(cli: &Cli, out: PathBuf, a: &TraverseArgs) -> std::result::Result<(), Failure> {
    let (model, splits) = load_pair(&a.ck)?;
    let d = TraversalConfig::default();
    let cfg = TraversalConfig {
        radii: a.radii.clone().unwrap_or(d.radii),
        gamma: a.gamma.unwrap_or(d.gamma),
        sigma: a.sigma.unwrap_or(d.sigma),
        steps: a.steps.unwrap_or(d.steps),
        seed: cli.seed,
    };
    if cfg.radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Usage("radii must be finite and non-negative".into()).into());
    }
    let inputs = if splits.eval.is_empty() { &splits.train } else { &splits.eval };
    let points = traversal_experiment(&model, &inputs[..a.inputs.min(inputs.len())], &cfg)?;
    let mut run = Run::new(out, cli.seed)?;
    run.write("traversal.csv", traversal_csv(&points))?;
    run.finish("traverse", json!({ "checkpoint": a.ck.checkpoint.display().to_string(), "traversal": to_json(&cfg) }))?;
    Ok(())
}

fn cmd_probe(cli: &Cli, out: PathBuf, a: &ProbeArgs) -> std::result::Result<(), Failure> {
    require(&a.checkpoint, "checkpoint")?;
    let (model, _) = load_model(&a.checkpoint)?;
    if model.config.token_mode != TokenMode::Math {
        return Err(Error::Mismatch("derivation probes need a math checkpoint".into()).into());
    }
    let scores = derivation_scores(&model, a.pairs_per_op, a.max_depth, cli.seed)?;
    let mut run = Run::new(out, cli.seed)?;
    run.write("probes.json", serde_json::to_string_pretty(&scores).map_err(Error::from)?)?;
    run.finish(
        "probe",
        json!({ "checkpoint": a.checkpoint.display().to_string(), "pairs_per_op": a.pairs_per_op, "max_depth": a.max_depth }),
    )?;
    Ok(())
}

fn cmd_attention(cli: &Cli, out: PathBuf, a: &AttentionArgs) -> std::result::Result<(), Failure> {
    require(&a.checkpoint, "checkpoint")?;
    let (model, _) = load_model(&a.checkpoint)?;
    let ids = tokenize(&a.text, &model.vocab, model.config.token_mode).map_err(|e| Usage(e.to_string()))?;
    let latents = match model.config.token_mode {
        TokenMode::Math => {
            let tree = synsem::corpus::parse_math_expression(&a.text).map_err(|e| Usage(e.to_string()))?;
            let record = synsem::corpus::CorpusRecord::math(tree, SplitTag::Eval);
            model.encode_mean(&model.prepare(&record)?, NoiseSeeds::new(mix(cli.seed, 0)))?
        }
        TokenMode::Natural => {
            return Err(Usage("attention export needs a parsed input; natural text has no parser".into()).into());
        }
    };
    let inputs = &ids[..ids.len() - 1];
    let maps = attention_heatmap(&model.decoder, &model.store, inputs, &latents)?;
    let mut run = Run::new(out, cli.seed)?;
    for (l, layer) in maps.iter().enumerate() {
        for (h, w) in layer.iter().enumerate() {
            let mut columns: Vec<String> = inputs.iter().map(|&t| model.vocab.token(t).to_string()).collect();
            if w.ncols() == columns.len() + 1 {
                columns.insert(0, "latent".into());
            }
            run.write(&format!("attention_l{l}_h{h}.csv"), heatmap_to_csv(w, &columns)?)?;
        }
    }
    run.finish("export-attention", json!({ "checkpoint": a.checkpoint.display().to_string(), "text": a.text }))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let result = match &cli.command {
        Command::GenerateCorpus(a) => cmd_generate(&cli, out, a),
        Command::Train(a) => cmd_train(&cli, out, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, out, a),
        Command::Traverse(a) => cmd_traverse(&cli, out, a),
        Command::Probe(a) => cmd_probe(&cli, out, a),
        Command::ExportAttention(a) => cmd_attention(&cli, out, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            use clap::CommandFactory;
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
