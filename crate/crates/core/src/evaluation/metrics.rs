//! Latent-geometry proxies and reconstruction scores.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a k-means++ seeding. Returns the summed squared
/// distance of points to their centroids.
fn kmeans_once(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng, iters: usize) -> f64 {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(c)));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .map(|c| (c, sq_dist(x.row(i), centroids.row(c))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(assign[i]).scaled_add(1.0, &x.row(i));
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).map(|i| sq_dist(x.row(i), centroids.row(assign[i]))).sum()
}

/// Within-cluster mean squared distance of the best of 10 k-means++ restarts
/// (100 Lloyd iterations each).
pub fn kmeans_mse(latents: ArrayView2<f64>, k: usize, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be ≥ 1".into()));
    }
    if latents.nrows() < k {
        return Err(Error::Invalid(format!("{} rows for k = {k}", latents.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let best = (0..10).map(|_| kmeans_once(latents, k, &mut rng, 100)).fold(f64::INFINITY, f64::min);
    Ok(best / latents.nrows() as f64)
}

/// Accuracy and macro-F1 over the classes present in `truth`.
pub fn accuracy_f1(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    if truth.is_empty() {
        return (0.0, 0.0);
    }
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut f1_sum = 0.0;
    for &c in &classes {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        if tp > 0.0 {
            let precision = tp / (tp + fp);
            let recall = tp / (tp + fn_);
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    (correct as f64 / truth.len() as f64, f1_sum / classes.len() as f64)
}

/// Multinomial logistic regression on standardised features, fitted by
/// full-batch gradient descent with a small L2 penalty.
#[derive(Clone, Debug)]
pub struct SoftmaxProbe {
    mean: Array1<f64>,
    scale: Array1<f64>,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl SoftmaxProbe {
    pub fn fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        let xs = (&x - &mean) * &std;
        let (n, d) = xs.dim();
        let mut w = Array2::<f64>::zeros((d, n_classes));
        let mut b = Array1::<f64>::zeros(n_classes);
        let mut onehot = Array2::<f64>::zeros((n, n_classes));
        for (i, &c) in y.iter().enumerate() {
            onehot[[i, c]] = 1.0;
        }
        let (lr, l2) = (0.5, 1e-3);
        for _ in 0..300 {
            let mut p = xs.dot(&w) + &b;
            for mut row in p.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row /= s;
            }
            let err = (p - &onehot) / n as f64;
            let gw = xs.t().dot(&err) + &(&w * l2);
            let gb = err.sum_axis(Axis(0));
            w.scaled_add(-lr, &gw);
            b.scaled_add(-lr, &gb);
        }
        Self { mean, scale: std, w, b }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        let scores = ((&x - &self.mean) * &self.scale).dot(&self.w) + &self.b;
        scores
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i))
            .collect()
    }
}

/// Seeded 80/20 train/test index split.
pub fn split_80_20(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n * 4).div_ceil(5).min(n.saturating_sub(1)).max(1);
    let test = idx.split_off(cut);
    (idx, test)
}

fn dense_labels<T: Eq + std::hash::Hash + Ord + Clone>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<T> = labels.to_vec();
    uniq.sort();
    uniq.dedup();
    let map: HashMap<T, usize> = uniq.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    (labels.iter().map(|l| map[l]).collect(), uniq.len())
}

/// Linear probe: 80/20 split, softmax regression, test accuracy and macro-F1.
pub fn probe_linear<T: Eq + std::hash::Hash + Ord + Clone>(latents: ArrayView2<f64>, labels: &[T], seed: u64) -> Result<(f64, f64)> {
    if latents.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", latents.nrows(), labels.len())));
    }
    let (y, k) = dense_labels(labels);
    if k < 2 {
        return Err(Error::Invalid("probe needs at least two classes".into()));
    }
    let (train, test) = split_80_20(y.len(), seed);
    let xt = latents.select(Axis(0), &train);
    let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let probe = SoftmaxProbe::fit(xt.view(), &yt, k);
    let pred = probe.predict(latents.select(Axis(0), &test).view());
    let truth: Vec<usize> = test.iter().map(|&i| y[i]).collect();
    Ok(accuracy_f1(&truth, &pred))
}

/// ψ(n) for integer `n ≥ 1`.
fn digamma_int(n: usize) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    (1..n).map(|i| 1.0 / i as f64).sum::<f64>() - EULER
}

fn chebyshev(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Kraskov–Stögbauer–Grassberger estimator (first variant, k = 3, max-norm)
/// in nats, clipped at 0.
pub fn mi_estimate(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    const K: usize = 3;
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("{n} rows against {}", y.nrows())));
    }
    if n < K + 1 {
        return Err(Error::Invalid(format!("{n} rows, need at least {}", K + 1)));
    }
    let per_point = crate::par::map_range(n, |i| {
        let mut joint: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (chebyshev(x.row(i), x.row(j)).max(chebyshev(y.row(i), y.row(j))), j))
            .collect();
        joint.select_nth_unstable_by(K - 1, |a, b| a.0.total_cmp(&b.0));
        let eps = joint[K - 1].0;
        let nx = (0..n).filter(|&j| j != i && chebyshev(x.row(i), x.row(j)) < eps).count();
        let ny = (0..n).filter(|&j| j != i && chebyshev(y.row(i), y.row(j)) < eps).count();
        digamma_int(nx + 1) + digamma_int(ny + 1)
    });
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok((digamma_int(K) + digamma_int(n) - mean).max(0.0))
}

/// Diagonal Gaussian fit (population variance, floored at 1e-6).
pub fn diag_gaussian(z: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let var = z.var_axis(Axis(0), 0.0).mapv(|v| v.max(1e-6));
    (mean, var)
}

/// KL(N_s ‖ N_y) and the 2-Wasserstein distance between diagonal Gaussian
/// fits of two latent sets.
pub fn gaussian_divergences(zs: ArrayView2<f64>, zy: ArrayView2<f64>) -> Result<(f64, f64)> {
    if zs.nrows() < 2 || zy.nrows() < 2 {
        return Err(Error::Invalid("each set needs at least two rows".into()));
    }
    if zs.ncols() != zy.ncols() {
        return Err(Error::Shape(format!("{} against {} dimensions", zs.ncols(), zy.ncols())));
    }
    let (ms, vs) = diag_gaussian(zs);
    let (my, vy) = diag_gaussian(zy);
    let mut kl = 0.0;
    let mut w2 = 0.0;
    for j in 0..ms.len() {
        let dm = ms[j] - my[j];
        kl += 0.5 * ((vy[j] / vs[j]).ln() + (vs[j] + dm * dm) / vy[j] - 1.0);
        w2 += dm * dm + (vs[j].sqrt() - vy[j].sqrt()).powi(2);
    }
    Ok((kl, w2.sqrt()))
}

pub fn exact_match<S: PartialEq>(pairs: &[(Vec<S>, Vec<S>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(r, h)| r == h).count() as f64 / pairs.len() as f64
}

fn ngram_counts<S: Eq + std::hash::Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with uniform weights, clipped counts and the brevity
/// penalty, without smoothing. Orders for which no hypothesis has any n-gram
/// are left out of the geometric mean.
pub fn corpus_bleu<S: Eq + std::hash::Hash>(pairs: &[(Vec<S>, Vec<S>)]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut ref_len, mut hyp_len) = (0usize, 0usize);
    for (r, h) in pairs {
        ref_len += r.len();
        hyp_len += h.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        orders += 1;
    }
    let bp = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// `exp(total nll / total tokens)`.
pub fn perplexity(total_nll: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::NAN;
    }
    (total_nll / tokens as f64).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionMetrics {
    pub em: f64,
    pub bleu: f64,
    /// Mean per-token NLL.
    pub nll: f64,
    pub ppl: f64,
}

/// EM and BLEU over `(reference, hypothesis)` token lists plus perplexity from
/// a summed decoder NLL over `tokens` predicted positions.
pub fn reconstruction_metrics<S: Eq + std::hash::Hash>(
    pairs: &[(Vec<S>, Vec<S>)],
    total_nll: f64,
    tokens: usize,
) -> Result<ReconstructionMetrics> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no reconstruction pairs".into()));
    }
    let nll = if tokens == 0 { f64::NAN } else { total_nll / tokens as f64 };
    Ok(ReconstructionMetrics { em: exact_match(pairs), bleu: corpus_bleu(pairs), nll, ppl: perplexity(total_nll, tokens) })
}
