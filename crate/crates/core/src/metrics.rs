//! Token-level BLEU and prediction entropy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logmath::{is_log_zero, safe_exp};
use crate::scorer::Scorer;
use crate::vocab::{TokenId, Vocabulary};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub score: f64,
    /// Smoothed modified precisions for n = 1..4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// The hypothesis had no countable tokens; score and penalty are 0.
    pub empty_hypothesis: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Stats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl Stats {
    fn add(&mut self, other: &Stats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    fn score(&self) -> BleuScore {
        if self.hyp_len == 0 {
            return BleuScore {
                score: 0.0,
                precisions: [0.0; MAX_ORDER],
                brevity_penalty: 0.0,
                hyp_len: 0,
                ref_len: self.ref_len,
                empty_hypothesis: true,
            };
        }
        let mut precisions = [0.0; MAX_ORDER];
        let mut zeros = 0;
        for n in 0..MAX_ORDER {
            precisions[n] = if self.matches[n] == 0 {
                zeros += 1;
                0.5f64.powi(zeros)
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
        }
        let brevity_penalty = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        BleuScore {
            score: brevity_penalty * log_mean.exp(),
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
            empty_hypothesis: false,
        }
    }
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// BLEU over token ids with clipped n-gram precision (n = 1..4), brevity
/// penalty `min(1, exp(1 - r/c))`, and exponential smoothing: the k-th
/// precision with no matches is replaced by `1 / 2^k`.
///
/// Tokens in `ignore` (typically `<s>` and `</s>`) are dropped before
/// counting.
#[derive(Debug, Clone, Default)]
pub struct Bleu {
    ignore: Vec<TokenId>,
}

impl Bleu {
    pub fn new(ignore: impl IntoIterator<Item = TokenId>) -> Self {
        Self {
            ignore: ignore.into_iter().collect(),
        }
    }

    /// Ignores the vocabulary's start and end markers.
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        Self::new([vocab.bos(), vocab.eos()])
    }

    fn strip(&self, seq: &[TokenId]) -> Vec<TokenId> {
        seq.iter().copied().filter(|t| !self.ignore.contains(t)).collect()
    }

    fn stats(&self, hyp: &[TokenId], reference: &[TokenId]) -> Result<Stats> {
        let hyp = self.strip(hyp);
        let reference = self.strip(reference);
        if reference.is_empty() {
            return Err(Error::data("BLEU reference is empty"));
        }
        let mut s = Stats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Stats::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(&hyp, n);
            let r = ngram_counts(&reference, n);
            s.totals[n - 1] = h.values().sum();
            s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        Ok(s)
    }

    pub fn sentence(&self, hyp: &[TokenId], reference: &[TokenId]) -> Result<BleuScore> {
        Ok(self.stats(hyp, reference)?.score())
    }

    /// Pools n-gram counts and lengths over all pairs before scoring.
    pub fn corpus<H, R>(&self, pairs: &[(H, R)]) -> Result<BleuScore>
    where
        H: AsRef<[TokenId]>,
        R: AsRef<[TokenId]>,
    {
        if pairs.is_empty() {
            return Err(Error::data("corpus BLEU needs at least one pair"));
        }
        let mut total = Stats::default();
        for (i, (h, r)) in pairs.iter().enumerate() {
            let s = self
                .stats(h.as_ref(), r.as_ref())
                .map_err(|e| Error::data(format!("pair {i}: {e}")))?;
            total.add(&s);
        }
        Ok(total.score())
    }
}

/// `-Σ p ln p` of a log-distribution, in nats.
pub fn distribution_entropy(log_dist: &[f64]) -> f64 {
    let sum: f64 = log_dist
        .iter()
        .filter(|&&l| !is_log_zero(l))
        .map(|&l| safe_exp(l) * l)
        .sum();
    // avoids reporting -0 for point masses
    0.0 - sum
}

/// Sum of per-step entropies along the teacher-forced `output`, and the
/// number of steps (generated tokens, end marker included).
pub fn entropy_sum(scorer: &dyn Scorer, input: &[TokenId], output: &[TokenId]) -> (f64, usize) {
    let steps = output.len().saturating_sub(1);
    let total = (1..output.len())
        .map(|t| distribution_entropy(&scorer.next_log_distribution(input, &output[..t])))
        .sum();
    (total, steps)
}

/// Mean next-token entropy along the teacher-forced `output`. Zero when
/// `output` holds no generated tokens.
pub fn prediction_entropy(scorer: &dyn Scorer, input: &[TokenId], output: &[TokenId]) -> f64 {
    match entropy_sum(scorer, input, output) {
        (_, 0) => 0.0,
        (total, steps) => total / steps as f64,
    }
}

/// Mean step entropy over a dataset, each example weighted by its number
/// of steps.
pub fn dataset_entropy<I, O>(scorer: &dyn Scorer, examples: &[(I, O)]) -> f64
where
    I: AsRef<[TokenId]>,
    O: AsRef<[TokenId]>,
{
    let (total, steps) = examples.iter().fold((0.0, 0usize), |(t, n), (i, o)| {
        let (et, en) = entropy_sum(scorer, i.as_ref(), o.as_ref());
        (t + et, n + en)
    });
    if steps == 0 {
        0.0
    } else {
        total / steps as f64
    }
}
