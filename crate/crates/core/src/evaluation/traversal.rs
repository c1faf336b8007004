//! Ornstein–Uhlenbeck walks in the semantic space with syntax held fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_math_expression, strip_word_content, CorpusRecord, SyntaxTree, TokenMode};
use crate::encoders::DualLatent;
use crate::error::{Error, Result};
use crate::evaluation::ted::tree_edit_distance;
use crate::model::{mix, Model, NoiseSeeds};
use crate::par;

/// `z' = −γ z + σ W` with `W ~ N(0, I)`.
pub fn ou_step<R: rand::Rng>(z: &[f64], gamma: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    z.iter()
        .map(|&v| {
            let w: f64 = StandardNormal.sample(rng);
            -gamma * v + sigma * w
        })
        .collect()
}

/// `z_T − z_0` after `steps` OU steps from `z0`.
pub fn ou_displacement<R: rand::Rng>(z0: &[f64], gamma: f64, sigma: f64, steps: usize, rng: &mut R) -> Vec<f64> {
    let mut z = z0.to_vec();
    for _ in 0..steps {
        z = ou_step(&z, gamma, sigma, rng);
    }
    z.iter().zip(z0).map(|(a, b)| a - b).collect()
}

/// `z0 + r · d / |d|`; `z0` itself when `r` or `d` is zero.
pub fn at_radius(z0: &[f64], d: &[f64], radius: f64) -> Vec<f64> {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if radius == 0.0 || norm == 0.0 {
        return z0.to_vec();
    }
    z0.iter().zip(d).map(|(z, v)| z + radius * v / norm).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversalConfig {
    pub radii: Vec<f64>,
    pub gamma: f64,
    pub sigma: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self { radii: vec![0.2, 0.6, 1.0, 1.4], gamma: -0.95, sigma: 0.1, steps: 10, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalPoint {
    pub radius: f64,
    pub mean_ted: f64,
    pub n: usize,
    /// Generations that did not parse and were scored against a single node.
    pub unparsed: usize,
}

/// Fallback tree for generations that do not parse.
pub fn fallback_tree() -> SyntaxTree {
    SyntaxTree::leaf("Symbol")
}

/// Syntax-only tree of a generated string, or `None` when it does not parse.
pub fn generated_syntax(text: &str) -> Option<SyntaxTree> {
    parse_math_expression(text).ok().map(|t| strip_word_content(&t))
}

/// The walked coordinates and their count. Dual models walk all of `z_sem`;
/// single-space models walk the first half of `z` and hold the second half
/// fixed as the syntax surrogate.
fn walked(latents: &DualLatent) -> (Vec<f64>, usize) {
    let sem = &latents.sem.mu;
    if latents.syn.is_some() {
        (sem.clone(), sem.len())
    } else {
        let h = sem.len() / 2;
        (sem[..h].to_vec(), h)
    }
}

/// Mean stripped-tree edit distance between each input and the greedy
/// decoding after moving its semantic latent to every radius.
pub fn traversal_experiment(model: &Model, inputs: &[CorpusRecord], cfg: &TraversalConfig) -> Result<Vec<TraversalPoint>> {
    if model.config.token_mode != TokenMode::Math {
        return Err(Error::Invalid("traversal scoring needs math-mode generations".into()));
    }
    let per_input = par::map(inputs, |i, rec| -> Result<Vec<(usize, bool)>> {
        let input = model.prepare(rec)?;
        let means = model.encode_mean(&input, NoiseSeeds::new(mix(cfg.seed, i as u64)))?;
        let (z0, h) = walked(&means);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x7a7a, i as u64));
        let d = ou_displacement(&z0, cfg.gamma, cfg.sigma, cfg.steps, &mut rng);
        let reference = strip_word_content(&rec.tree);
        cfg.radii
            .iter()
            .map(|&r| {
                let mut lat = means.clone();
                let moved = at_radius(&z0, &d, r);
                lat.sem.sample[..h].copy_from_slice(&moved);
                let ids = model.generate(&lat)?;
                let text = model.decode_text(&ids);
                Ok(match generated_syntax(&text) {
                    Some(t) => (tree_edit_distance(&reference, &t), false),
                    None => (tree_edit_distance(&reference, &fallback_tree()), true),
                })
            })
            .collect()
    });
    let mut points: Vec<TraversalPoint> = cfg
        .radii
        .iter()
        .map(|&radius| TraversalPoint { radius, mean_ted: 0.0, n: 0, unparsed: 0 })
        .collect();
    for r in per_input {
        for (p, (ted, failed)) in points.iter_mut().zip(r?) {
            p.mean_ted += ted as f64;
            p.n += 1;
            p.unparsed += usize::from(failed);
        }
    }
    for p in &mut points {
        if p.n > 0 {
            p.mean_ted /= p.n as f64;
        }
    }
    Ok(points)
}

pub fn traversal_csv(points: &[TraversalPoint]) -> String {
    let mut s = String::from("radius,mean_ted,n\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.radius, p.mean_ted, p.n));
    }
    s
}
