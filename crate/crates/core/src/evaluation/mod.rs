//! Latent geometry, reconstruction, traversal and derivation-probe measurements.

pub mod derivation;
pub mod metrics;
pub mod projection;
pub mod ted;
pub mod traversal;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{strip_word_content, CorpusRecord, SplitTag, Splits, TokenMode};
use crate::encoders::DualLatent;
use crate::error::{Error, Result};
use crate::model::{mix, Model, NoiseSeeds};
use crate::par;

pub use derivation::{DerivationScores, Operation};
pub use metrics::ReconstructionMetrics;
pub use traversal::{TraversalConfig, TraversalPoint};

/// Scalar keys every report carries.
pub const REPORT_KEYS: [&str; 13] = [
    "em",
    "bleu",
    "nll",
    "ppl",
    "kmeans_mse_sem",
    "kmeans_mse_syn",
    "acc_dep_sem",
    "acc_dep_syn",
    "f1_dep_sem",
    "f1_dep_syn",
    "mi_sem_syn",
    "kl_sem_syn",
    "wass_sem_syn",
];

/// Posterior means of the two spaces. Single-space models are split into
/// halves, the first standing in for semantics.
pub fn split_spaces(latents: &DualLatent) -> (Vec<f64>, Vec<f64>) {
    match &latents.syn {
        Some(syn) => (latents.sem.mu.clone(), syn.mu.clone()),
        None => {
            let h = latents.sem.mu.len() / 2;
            (latents.sem.mu[..h].to_vec(), latents.sem.mu[h..].to_vec())
        }
    }
}

fn rows(vs: Vec<Vec<f64>>) -> Array2<f64> {
    let d = vs.first().map_or(0, Vec::len);
    Array2::from_shape_vec((vs.len(), d), vs.into_iter().flatten().collect()).expect("equal row widths")
}

/// Latent means with aligned labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDump {
    pub z_sem: Array2<f64>,
    pub z_syn: Array2<f64>,
    pub depth: Vec<usize>,
    /// Root label of the syntax-only tree.
    pub cluster: Vec<String>,
    pub op: Vec<Option<Operation>>,
}

impl LatentDump {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [self.z_sem.nrows(), self.z_syn.nrows(), self.cluster.len(), self.op.len()].iter().any(|&r| r != n) {
            return Err(Error::Shape("latent dump columns are not aligned".into()));
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        let mut c: Vec<&String> = self.cluster.iter().collect();
        c.sort_unstable();
        c.dedup();
        c.len()
    }
}

pub fn latent_dump(model: &Model, records: &[CorpusRecord], seed: u64) -> Result<LatentDump> {
    let encoded = par::map(records, |i, r| -> Result<(Vec<f64>, Vec<f64>)> {
        let input = model.prepare(r)?;
        Ok(split_spaces(&model.encode_mean(&input, NoiseSeeds::new(mix(seed, i as u64)))?))
    });
    let (mut sem, mut syn) = (Vec::with_capacity(records.len()), Vec::with_capacity(records.len()));
    for e in encoded {
        let (s, y) = e?;
        sem.push(s);
        syn.push(y);
    }
    Ok(LatentDump {
        z_sem: rows(sem),
        z_syn: rows(syn),
        depth: records.iter().map(CorpusRecord::depth).collect(),
        cluster: records.iter().map(|r| strip_word_content(&r.tree).label).collect(),
        op: vec![None; records.len()],
    })
}

/// k-means, depth-probe, MI, KL and Wasserstein proxies over a dump.
pub fn geometry_metrics(dump: &LatentDump, seed: u64) -> Result<BTreeMap<String, f64>> {
    dump.validate()?;
    let k = dump.n_clusters();
    let mut m = BTreeMap::new();
    for (name, z) in [("sem", dump.z_sem.view()), ("syn", dump.z_syn.view())] {
        m.insert(format!("kmeans_mse_{name}"), metrics::kmeans_mse(z, k, seed)?);
        let (acc, f1) = metrics::probe_linear(z, &dump.depth, seed)?;
        m.insert(format!("acc_dep_{name}"), acc);
        m.insert(format!("f1_dep_{name}"), f1);
    }
    m.insert("mi_sem_syn".into(), metrics::mi_estimate(dump.z_sem.view(), dump.z_syn.view())?);
    let (kl, wass) = metrics::gaussian_divergences(dump.z_sem.view(), dump.z_syn.view())?;
    m.insert("kl_sem_syn".into(), kl);
    m.insert("wass_sem_syn".into(), wass);
    Ok(m)
}

/// Greedy reconstructions from posterior means, scored against the inputs.
pub fn reconstruction(model: &Model, records: &[CorpusRecord], seed: u64) -> Result<ReconstructionMetrics> {
    let scored = par::map(records, |i, r| -> Result<(Vec<usize>, Vec<usize>, f64, usize)> {
        let input = model.prepare(r)?;
        let lat = model.encode_mean(&input, NoiseSeeds::new(mix(seed, i as u64)))?;
        let hyp = model.generate(&lat)?;
        let (nll, tokens) = model.sequence_nll(&input, &lat)?;
        Ok((input.ids[1..input.ids.len() - 1].to_vec(), hyp, nll, tokens))
    });
    let mut pairs = Vec::with_capacity(records.len());
    let (mut nll, mut tokens) = (0.0, 0);
    for s in scored {
        let (r, h, l, t) = s?;
        pairs.push((r, h));
        nll += l;
        tokens += t;
    }
    metrics::reconstruction_metrics(&pairs, nll, tokens)
}

/// Operation and conclusion probes on synthetic derivation pairs, with
/// features `[z_sem(x), z_syn(x), z_sem(y), z_syn(y)]`.
pub fn derivation_scores(model: &Model, n_per_op: usize, max_depth: usize, seed: u64) -> Result<DerivationScores> {
    let max_tokens = model.config.decoder.max_len.saturating_sub(2);
    let pairs = derivation::generate_derivation_pairs(n_per_op, max_depth, max_tokens, seed);
    let encoded = par::map(&pairs, |i, p| -> Result<(Vec<f64>, Vec<f64>)> {
        let enc = |tree: &crate::corpus::SyntaxTree, stream: u64| -> Result<Vec<f64>> {
            let input = model.prepare(&CorpusRecord::math(tree.clone(), SplitTag::Eval))?;
            let (mut s, y) = split_spaces(&model.encode_mean(&input, NoiseSeeds::new(mix(seed, stream)))?);
            s.extend(y);
            Ok(s)
        };
        Ok((enc(&p.premise, 2 * i as u64)?, enc(&p.conclusion, 2 * i as u64 + 1)?))
    });
    let mut premise = Vec::with_capacity(pairs.len());
    let mut conclusion = Vec::with_capacity(pairs.len());
    for e in encoded {
        let (p, c) = e?;
        premise.push(p);
        conclusion.push(c);
    }
    let (p, c) = (rows(premise), rows(conclusion));
    let op_features = derivation::pair_features(p.view(), c.view());
    let ops: Vec<Operation> = pairs.iter().map(|x| x.op).collect();
    let partners = derivation::negative_partners(pairs.len(), mix(seed, 99));
    let negatives = c.select(ndarray::Axis(0), &partners);
    let concl_features = ndarray::concatenate(
        ndarray::Axis(0),
        &[op_features.view(), derivation::pair_features(p.view(), negatives.view()).view()],
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    let labels: Vec<bool> = (0..2 * pairs.len()).map(|i| i < pairs.len()).collect();
    derivation::derivation_probes(op_features.view(), &ops, concl_features.view(), &labels, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Inputs walked per traversal.
    pub traversal_inputs: usize,
    pub traversal: TraversalConfig,
    pub probe_pairs_per_op: usize,
    pub probe_max_depth: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            traversal_inputs: 50,
            traversal: TraversalConfig::default(),
            probe_pairs_per_op: 100,
            probe_max_depth: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The [`REPORT_KEYS`] on EVAL, plus `em_<split>`, `bleu_<split>`,
    /// `nll_<split>` and `ppl_<split>` for every non-empty test split.
    pub metrics: BTreeMap<String, f64>,
    pub traversal: Vec<TraversalPoint>,
    pub probes: Option<DerivationScores>,
}

impl EvalReport {
    pub fn missing_keys(&self) -> Vec<&'static str> {
        REPORT_KEYS.iter().copied().filter(|k| !self.metrics.contains_key(*k)).collect()
    }

    /// Range checks on every metric family.
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.missing_keys().first() {
            return Err(Error::Invalid(format!("report lacks {k}")));
        }
        for (k, &v) in &self.metrics {
            let ok = if ["em", "bleu", "acc_", "f1_"].iter().any(|p| k.starts_with(p)) {
                (0.0..=1.0).contains(&v)
            } else if k.starts_with("ppl") {
                v >= 1.0
            } else {
                v >= 0.0
            };
            if !ok {
                return Err(Error::Invalid(format!("{k} = {v} out of range")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Flat `metric,value` CSV including probe scores.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            writeln!(s, "{k},{v:?}").expect("string write");
        }
        if let Some(p) = &self.probes {
            for (k, v) in [("op_acc", p.op_acc), ("op_f1", p.op_f1), ("concl_acc", p.concl_acc), ("concl_f1", p.concl_f1)] {
                writeln!(s, "{k},{v:?}").expect("string write");
            }
        }
        s
    }
}

/// Full evaluation. Geometry uses EVAL (TRAIN when EVAL is empty); traversal
/// and derivation probes run only for math models.
pub fn evaluate(model: &Model, splits: &Splits, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for tag in SplitTag::TEST {
        let recs = splits.get(tag);
        if recs.is_empty() {
            continue;
        }
        let r = reconstruction(model, recs, mix(cfg.seed, tag as u64))?;
        let suffix = tag.as_str().to_lowercase();
        for (k, v) in [("em", r.em), ("bleu", r.bleu), ("nll", r.nll), ("ppl", r.ppl)] {
            report.metrics.insert(format!("{k}_{suffix}"), v);
            if tag == SplitTag::Eval {
                report.metrics.insert(k.into(), v);
            }
        }
    }
    let geometry_set = if splits.eval.is_empty() { &splits.train } else { &splits.eval };
    if !report.metrics.contains_key("em") {
        let r = reconstruction(model, geometry_set, cfg.seed)?;
        report.metrics.extend([("em".into(), r.em), ("bleu".into(), r.bleu), ("nll".into(), r.nll), ("ppl".into(), r.ppl)]);
    }
    let dump = latent_dump(model, geometry_set, cfg.seed)?;
    report.metrics.extend(geometry_metrics(&dump, cfg.seed)?);
    if model.config.token_mode == TokenMode::Math {
        let n = cfg.traversal_inputs.min(geometry_set.len());
        report.traversal = traversal::traversal_experiment(model, &geometry_set[..n], &cfg.traversal)?;
        report.probes = Some(derivation_scores(model, cfg.probe_pairs_per_op, cfg.probe_max_depth, cfg.seed)?);
    }
    Ok(report)
}

/// Two-dimensional PCA points of one space, labelled by depth.
pub fn projection_csv(z: ArrayView2<f64>, depth: &[usize]) -> Result<String> {
    let labels: Vec<String> = depth.iter().map(usize::to_string).collect();
    projection::export_projection_2d(z, &labels)
}
