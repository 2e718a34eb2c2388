//! Skip-gram with negative sampling over per-user token sequences, used to
//! warm-start the indicator embedding tables.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{axpy, dot, sigmoid, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("corpus has no center/context pairs")]
    EmptyCorpus,
    #[error("token {token} exceeds vocabulary {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("non-finite embedding entry after epoch {0}")]
    NonFinite(usize),
}

/// `vocab x dim` matrix; row `i` is the vector of token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Tensor,
}

impl EmbeddingTable {
    pub fn vocab(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn vector(&self, token: u32) -> &[f64] {
        self.weights.row(token as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCorpus {
    pub vocab: usize,
    pub sequences: Vec<Vec<u32>>,
}

impl TokenCorpus {
    pub fn pair_count(&self, window: usize) -> usize {
        self.sequences
            .iter()
            .map(|s| (0..s.len()).map(|i| context_range(i, s.len(), window).count()).sum::<usize>())
            .sum()
    }
}

fn context_range(center: usize, len: usize, window: usize) -> impl Iterator<Item = usize> {
    let lo = center.saturating_sub(window);
    let hi = (center + window).min(len.saturating_sub(1));
    (lo..=hi).filter(move |&j| j != center)
}

/// One sequence per user and feature: the user's weekly tokens in
/// chronological order. Input items are `(user, week_start, tokens)`.
pub fn build_corpus<'a, I>(items: I, vocabs: [usize; 3]) -> [TokenCorpus; 3]
where
    I: IntoIterator<Item = (&'a str, i64, [u32; 3])>,
{
    let mut per_user: BTreeMap<&str, Vec<(i64, [u32; 3])>> = BTreeMap::new();
    for (user, week, toks) in items {
        per_user.entry(user).or_default().push((week, toks));
    }
    let mut out: [TokenCorpus; 3] = vocabs.map(|vocab| TokenCorpus {
        vocab,
        sequences: Vec::new(),
    });
    for (_, mut weeks) in per_user {
        weeks.sort_by_key(|w| w.0);
        for (f, corpus) in out.iter_mut().enumerate() {
            corpus.sequences.push(weeks.iter().map(|w| w.1[f]).collect());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to near zero.
    pub lr: f64,
    /// Exponent applied to unigram counts for negative sampling.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 2,
            negatives: 5,
            epochs: 20,
            lr: 0.025,
            smoothing: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgGrads {
    pub loss: f64,
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

/// Negative-sampling loss `-ln s(u.v) - sum_k ln s(-u.n_k)` for center
/// input vector `u`, context output vector `v` and negative output vectors
/// `n_k`, with analytic gradients.
pub fn sg_loss_and_grads(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgGrads {
    let pos = dot(center, context);
    // -ln s(x) = ln(1 + e^-x), written stably
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    let mut loss = softplus(-pos);
    let gp = sigmoid(pos) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|v| gp * v).collect();
    let d_context: Vec<f64> = center.iter().map(|u| gp * u).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += softplus(s);
        let gn = sigmoid(s);
        axpy(gn, n, &mut d_center);
        d_negatives.push(center.iter().map(|u| gn * u).collect());
    }
    SgGrads {
        loss,
        d_center,
        d_context,
        d_negatives,
    }
}

/// Cumulative unigram^smoothing distribution for negative draws.
struct NegativeSampler {
    cdf: Vec<f64>,
}

impl NegativeSampler {
    fn new(corpus: &TokenCorpus, smoothing: f64) -> Self {
        let mut counts = vec![0.0; corpus.vocab];
        for s in &corpus.sequences {
            for &t in s {
                counts[t as usize] += 1.0;
            }
        }
        let mut acc = 0.0;
        let cdf = counts
            .iter()
            .map(|&c: &f64| {
                acc += if c > 0.0 { c.powf(smoothing) } else { 0.0 };
                acc
            })
            .collect();
        NegativeSampler { cdf }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> u32 {
        let total = *self.cdf.last().unwrap();
        let x = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= x).min(self.cdf.len() - 1) as u32
    }
}

/// Trained input and output vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub input: EmbeddingTable,
    pub output: EmbeddingTable,
}

impl SkipGramModel {
    pub fn init(vocab: usize, cfg: &SkipGramConfig, rng: &mut impl Rng) -> Self {
        SkipGramModel {
            input: EmbeddingTable {
                weights: Tensor::uniform(&[vocab, cfg.dim], 0.5 / cfg.dim as f64, rng),
            },
            output: EmbeddingTable {
                weights: Tensor::zeros(&[vocab, cfg.dim]),
            },
        }
    }

    pub fn pair_loss(&self, center: u32, context: u32, negatives: &[u32]) -> f64 {
        let negs: Vec<&[f64]> = negatives.iter().map(|&n| self.output.vector(n)).collect();
        sg_loss_and_grads(self.input.vector(center), self.output.vector(context), &negs).loss
    }

    /// One SGD update on a single center/context pair.
    pub fn update(&mut self, center: u32, context: u32, negatives: &[u32], lr: f64) -> f64 {
        let g = {
            let negs: Vec<&[f64]> = negatives.iter().map(|&n| self.output.vector(n)).collect();
            sg_loss_and_grads(self.input.vector(center), self.output.vector(context), &negs)
        };
        axpy(-lr, &g.d_center, self.input.weights.row_mut(center as usize));
        axpy(-lr, &g.d_context, self.output.weights.row_mut(context as usize));
        for (&n, d) in negatives.iter().zip(&g.d_negatives) {
            axpy(-lr, d, self.output.weights.row_mut(n as usize));
        }
        g.loss
    }
}

fn check_tokens(corpus: &TokenCorpus) -> Result<(), EmbedError> {
    for s in &corpus.sequences {
        for &t in s {
            if t as usize >= corpus.vocab {
                return Err(EmbedError::TokenOutOfRange {
                    token: t,
                    vocab: corpus.vocab,
                });
            }
        }
    }
    Ok(())
}

/// Trains skip-gram on `corpus` and returns the input vectors. Runs are
/// fully determined by `cfg.seed`.
pub fn train_skipgram(corpus: &TokenCorpus, cfg: &SkipGramConfig) -> Result<EmbeddingTable, EmbedError> {
    train_skipgram_model(corpus, cfg).map(|m| m.input)
}

pub fn train_skipgram_model(corpus: &TokenCorpus, cfg: &SkipGramConfig) -> Result<SkipGramModel, EmbedError> {
    check_tokens(corpus)?;
    let pairs_per_epoch = corpus.pair_count(cfg.window);
    if pairs_per_epoch == 0 || corpus.vocab == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SkipGramModel::init(corpus.vocab, cfg, &mut rng);
    let sampler = NegativeSampler::new(corpus, cfg.smoothing);
    let total = (pairs_per_epoch * cfg.epochs) as f64;
    let mut done = 0usize;
    let mut negatives = Vec::with_capacity(cfg.negatives);
    for epoch in 0..cfg.epochs {
        for seq in &corpus.sequences {
            for (i, &center) in seq.iter().enumerate() {
                for j in context_range(i, seq.len(), cfg.window) {
                    let context = seq[j];
                    negatives.clear();
                    for _ in 0..cfg.negatives {
                        let n = sampler.draw(&mut rng);
                        if n != context {
                            negatives.push(n);
                        }
                    }
                    let lr = cfg.lr * (1.0 - done as f64 / total).max(1e-4);
                    model.update(center, context, &negatives, lr);
                    done += 1;
                }
            }
        }
        if !(model.input.weights.all_finite() && model.output.weights.all_finite()) {
            return Err(EmbedError::NonFinite(epoch));
        }
    }
    Ok(model)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn corpus_per_user_chronological() {
        let items = vec![
            ("u1", 300, [3, 30, 7]),
            ("u1", 100, [1, 10, 5]),
            ("u2", 100, [9, 90, 1]),
            ("u1", 200, [2, 20, 6]),
            ("u1", 400, [4, 40, 8]),
        ];
        let [rg, td, _ad] = build_corpus(items, [10, 100, 10]);
        assert_eq!(rg.sequences, vec![vec![1, 2, 3, 4], vec![9]]);
        assert_eq!(td.sequences[0], vec![10, 20, 30, 40]);
        // a lone week gives no pairs
        assert_eq!(
            TokenCorpus {
                vocab: 10,
                sequences: vec![vec![9]]
            }
            .pair_count(2),
            0
        );
        assert_eq!(rg.pair_count(1), 6);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = TokenCorpus {
            vocab: 5,
            sequences: vec![vec![1], vec![]],
        };
        assert_eq!(train_skipgram(&c, &SkipGramConfig::default()), Err(EmbedError::EmptyCorpus));
        let bad = TokenCorpus {
            vocab: 2,
            sequences: vec![vec![0, 5]],
        };
        assert!(matches!(train_skipgram(&bad, &SkipGramConfig::default()), Err(EmbedError::TokenOutOfRange { .. })));
    }

    #[test]
    fn zero_scores_give_k_plus_one_ln2() {
        let u = [0.0; 4];
        let v = [1.0, 2.0, 3.0, 4.0];
        let n1 = [0.5, -1.0, 0.0, 2.0];
        let n2 = [-3.0, 0.0, 1.0, 1.0];
        let g = sg_loss_and_grads(&u, &v, &[&n1, &n2]);
        assert!((g.loss - 3.0 * 2f64.ln()).abs() < 1e-12);
        // du = (s(0) - 1) v + s(0) (n1 + n2)
        for k in 0..4 {
            let expect = -0.5 * v[k] + 0.5 * (n1[k] + n2[k]);
            assert!((g.d_center[k] - expect).abs() < 1e-15);
        }
        assert!(g.d_context.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dim = 5;
        let init: Vec<f64> = (0..dim * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13).collect();
        let f = |p: &[f64]| {
            let (u, rest) = p.split_at(dim);
            let (v, rest) = rest.split_at(dim);
            let (a, b) = rest.split_at(dim);
            let g = sg_loss_and_grads(u, v, &[a, b]);
            let mut grad = g.d_center.clone();
            grad.extend(g.d_context);
            for d in g.d_negatives {
                grad.extend(d);
            }
            (g.loss, grad)
        };
        let r = grad_check(f, &init, 1e-4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn single_pair_update_lowers_loss() {
        let cfg = SkipGramConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = SkipGramModel::init(4, &cfg, &mut rng);
        // give the output vectors something to push against
        m.output.weights = Tensor::uniform(&[4, cfg.dim], 0.3, &mut rng);
        let before = m.pair_loss(0, 1, &[2, 3]);
        m.update(0, 1, &[2, 3], 0.025);
        let after = m.pair_loss(0, 1, &[2, 3]);
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn deterministic_under_seed() {
        let c = TokenCorpus {
            vocab: 6,
            sequences: vec![vec![0, 1, 2, 1, 0], vec![3, 4, 5, 4]],
        };
        let cfg = SkipGramConfig {
            seed: 17,
            ..Default::default()
        };
        assert_eq!(train_skipgram(&c, &cfg).unwrap(), train_skipgram(&c, &cfg).unwrap());
        let other = train_skipgram(&c, &SkipGramConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(train_skipgram(&c, &cfg).unwrap(), other);
    }

    #[test]
    fn adjacent_tokens_end_up_closer() {
        // A=0 and B=1 always appear together; C=2 lives with D=3, E=4.
        let mut sequences = Vec::new();
        for _ in 0..30 {
            sequences.push(vec![0, 1, 0, 1, 0, 1]);
            sequences.push(vec![2, 3, 4, 3, 2, 4]);
        }
        let corpus = TokenCorpus { vocab: 5, sequences };
        for seed in 0..5 {
            let cfg = SkipGramConfig {
                seed,
                ..Default::default()
            };
            let t = train_skipgram(&corpus, &cfg).unwrap();
            let ab = cosine(t.vector(0), t.vector(1));
            let ac = cosine(t.vector(0), t.vector(2));
            assert!(ab > ac, "seed {seed}: cos(A,B)={ab} cos(A,C)={ac}");
        }
    }
}
