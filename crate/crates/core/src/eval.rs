//! Classification and clustering metrics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("k-means needs at least k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("value {0} outside [-1, 1]")]
    OutOfRange(f64),
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self, EvalError> {
        check_lengths(truth.len(), pred.len())?;
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(pred) {
            for label in [t, p] {
                if label >= classes {
                    return Err(EvalError::LabelOutOfRange { label, classes });
                }
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    /// Per-class F1; zero when precision + recall is zero.
    pub fn f1_per_class(&self) -> Vec<f64> {
        let c = self.classes();
        (0..c)
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let predicted: u64 = (0..c).map(|t| self.counts[t][k]).sum();
                let actual: u64 = self.counts[k].iter().sum();
                let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn f1_macro(&self) -> f64 {
        let f = self.f1_per_class();
        f.iter().sum::<f64>() / f.len() as f64
    }
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64, EvalError> {
    check_lengths(truth.len(), pred.len())?;
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Unweighted mean of per-class F1 over `classes` classes.
pub fn f1_macro(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64, EvalError> {
    Ok(ConfusionMatrix::new(truth, pred, classes)?.f1_macro())
}

/// Maps a chance-adjusted score from `[-1, 1]` onto `[0, 1]`.
pub fn normalize01(x: f64) -> Result<f64, EvalError> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(EvalError::OutOfRange(x));
    }
    Ok((x + 1.0) / 2.0)
}

/// Relabels ids densely in order of first appearance.
fn densify(p: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut out = Vec::with_capacity(p.len());
    for &x in p {
        let next = map.len();
        out.push(*map.entry(x).or_insert(next));
    }
    (out, map.len())
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Contingency {
    fn new(a: &[usize], b: &[usize]) -> Result<Self, EvalError> {
        check_lengths(a.len(), b.len())?;
        let (a, ka) = densify(a);
        let (b, kb) = densify(b);
        let mut table = vec![vec![0usize; kb]; ka];
        for (&i, &j) in a.iter().zip(&b) {
            table[i][j] += 1;
        }
        let rows = table.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Contingency {
            n: a.len(),
            table,
            rows,
            cols,
        })
    }
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let c = Contingency::new(a, b)?;
    let sum_ij: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let sum_a: f64 = c.rows.iter().map(|&x| comb2(x)).sum();
    let sum_b: f64 = c.cols.iter().map(|&x| comb2(x)).sum();
    let expected = sum_a * sum_b / comb2(c.n).max(f64::MIN_POSITIVE);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / denom)
}

fn entropy_of(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Adjusted mutual information with max-normalization: MI, its
/// expectation under random permutations, and the larger of the two
/// marginal entropies, all in nats.
pub fn ami(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let c = Contingency::new(a, b)?;
    let (ka, kb) = (c.rows.len(), c.cols.len());
    if (ka == 1 && kb == 1) || (ka == c.n && kb == c.n) {
        return Ok(1.0);
    }
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let v = nij as f64;
                mi += v / n * (n * v / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    let emi = expected_mutual_information(&c);
    let h_max = entropy_of(&c.rows, c.n).max(entropy_of(&c.cols, c.n));
    let mut denom = h_max - emi;
    if denom < 0.0 {
        denom = denom.min(-f64::EPSILON);
    } else {
        denom = denom.max(f64::EPSILON);
    }
    Ok((mi - emi) / denom)
}

fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    let lf: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in &c.rows {
        for &bj in &c.cols {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let v = nij as f64;
                let term = v / nf * (nf * v / (ai as f64 * bj as f64)).ln();
                let log_p = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj]
                    - lf[n]
                    - lf[nij]
                    - lf[ai - nij]
                    - lf[bj - nij]
                    - lf[n + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if x < d {
                    idx = i;
                    break;
                }
                x -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult, EvalError> {
    let k = cfg.k;
    if k == 0 || points.len() < k {
        return Err(EvalError::TooFewPoints { n: points.len(), k });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(EvalError::LengthMismatch(dim, p.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iter.max(1) {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            (assignment[i], dists[i]) = nearest(p, &centroids);
        }
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        // reseed each empty cluster with the point worst served so far
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| sizes[assignment[i]] > 1)
                    .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                    .expect("n >= k leaves a donor cluster");
                sizes[assignment[far]] -= 1;
                assignment[far] = c;
                dists[far] = 0.0;
                sizes[c] = 1;
            }
        }
        let mut next = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (s, x) in next[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, s) in next.iter_mut().zip(&sizes) {
            c.iter_mut().for_each(|v| *v /= *s as f64);
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        inertia.push(points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if shift < cfg.tol {
            break;
        }
    }
    Ok(KMeansResult {
        assignment,
        centroids,
        inertia,
        iterations,
    })
}

/// Seeded shuffle of `0..n`, first `round(ratio * n)` indices for training.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((ratio * n as f64).round() as usize).min(n);
    let test = idx.split_off(cut);
    Ok((idx, test))
}

pub fn split_train_test<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), EvalError> {
    let (tr, te) = split_indices(items.len(), ratio, seed)?;
    Ok((
        tr.into_iter().map(|i| items[i].clone()).collect(),
        te.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub c_or_k: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(task: &str, c_or_k: usize, metric: &str, value: f64) -> Self {
        MetricRow {
            task: task.into(),
            c_or_k,
            metric: metric.into(),
            value,
        }
    }
}

pub const METRICS_HEADER: [&str; 4] = ["task", "C_or_k", "metric", "value"];

pub fn write_metrics<W: Write>(w: W, rows: &[MetricRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.write_record([r.task.clone(), r.c_or_k.to_string(), r.metric.clone(), format!("{:.6}", r.value)])?;
    }
    out.flush()?;
    Ok(())
}
