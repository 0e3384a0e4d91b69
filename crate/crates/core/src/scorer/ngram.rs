use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Scorer, VocabSource};
use crate::error::{Error, Result};
use crate::logmath::{safe_ln, LOG_ZERO};
use crate::vocab::{TokenId, TokenRef, Vocabulary};

/// A source sequence and a framed (`<s> ... </s>`) target sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFile {
    pub src: Vec<TokenRef>,
    pub tgt: Vec<TokenRef>,
}

/// Persisted n-gram model. The counts are rebuilt from `pairs` on load,
/// which is exact because training is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramModelFile {
    pub vocab: VocabSource,
    pub order: usize,
    pub alpha: f64,
    pub pairs: Vec<PairFile>,
}

#[derive(Debug, Clone)]
struct Counts {
    next: Vec<u64>,
    total: u64,
}

impl Counts {
    fn new(vocab_len: usize) -> Self {
        Self {
            next: vec![0; vocab_len],
            total: 0,
        }
    }
}

type ContextTable = HashMap<Vec<TokenId>, Counts>;

/// Interpolated add-alpha n-gram model conditioned on the input sequence.
///
/// For each order `i` in `1..=n` the context is the last `i - 1` prefix
/// tokens (or the whole prefix when shorter). Counts collected for the same
/// input are used when that input has seen the context; otherwise the model
/// falls back to counts pooled over all inputs. Orders are mixed with equal
/// weights `1/n`, and each order is smoothed over every token except `<s>`.
#[derive(Debug, Clone)]
pub struct NGramScorer {
    vocab: Arc<Vocabulary>,
    order: usize,
    alpha: f64,
    by_input: HashMap<Vec<TokenId>, ContextTable>,
    pooled: ContextTable,
    pairs: Vec<TrainingPair>,
}

fn check_target(vocab: &Vocabulary, tgt: &[TokenId], at: usize) -> Result<()> {
    let ok = tgt.len() >= 2
        && tgt[0] == vocab.bos()
        && tgt[tgt.len() - 1] == vocab.eos()
        && !tgt[1..tgt.len() - 1].iter().any(|&t| vocab.is_special(t))
        && tgt.iter().all(|&t| (t as usize) < vocab.len());
    if ok {
        Ok(())
    } else {
        Err(Error::data(format!(
            "training pair {at}: target must be <s> content... </s>, got [{}]",
            vocab.render(tgt).join(" ")
        )))
    }
}

impl NGramScorer {
    pub fn train(vocab: Arc<Vocabulary>, corpus: &[TrainingPair], order: usize, alpha: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::config(format!("n-gram order must be at least 1, got {order}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("add-alpha must be positive, got {alpha}")));
        }
        if corpus.is_empty() {
            return Err(Error::data("n-gram training corpus is empty"));
        }
        let v = vocab.len();
        let mut by_input: HashMap<Vec<TokenId>, ContextTable> = HashMap::new();
        let mut pooled: ContextTable = HashMap::new();
        for (i, pair) in corpus.iter().enumerate() {
            check_target(&vocab, &pair.tgt, i)?;
            let keyed = by_input.entry(pair.src.clone()).or_default();
            for t in 1..pair.tgt.len() {
                let next = pair.tgt[t] as usize;
                // distinct context lengths only; truncated contexts coincide
                for ctx_len in 0..=t.min(order - 1) {
                    let ctx = &pair.tgt[t - ctx_len..t];
                    for table in [&mut *keyed, &mut pooled] {
                        let c = table.entry(ctx.to_vec()).or_insert_with(|| Counts::new(v));
                        c.next[next] += 1;
                        c.total += 1;
                    }
                }
            }
        }
        Ok(Self {
            vocab,
            order,
            alpha,
            by_input,
            pooled,
            pairs: corpus.to_vec(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn from_file_repr(file: NGramModelFile, base_dir: &Path) -> Result<Self> {
        let vocab = Arc::new(file.vocab.load(base_dir)?);
        let pairs = file
            .pairs
            .iter()
            .map(|p| {
                Ok(TrainingPair {
                    src: vocab.resolve_seq(&p.src)?,
                    tgt: vocab.resolve_seq(&p.tgt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::train(vocab, &pairs, file.order, file.alpha)
    }

    pub fn to_file_repr(&self) -> NGramModelFile {
        let refs = |ids: &[TokenId]| self.vocab.render(ids).into_iter().map(TokenRef::Text).collect();
        NGramModelFile {
            vocab: VocabSource::Inline(self.vocab.to_file_repr()),
            order: self.order,
            alpha: self.alpha,
            pairs: self
                .pairs
                .iter()
                .map(|p| PairFile {
                    src: refs(&p.src),
                    tgt: refs(&p.tgt),
                })
                .collect(),
        }
    }

    fn counts_for<'a>(&'a self, keyed: Option<&'a ContextTable>, ctx: &[TokenId]) -> Option<&'a Counts> {
        keyed
            .and_then(|k| k.get(ctx))
            .filter(|c| c.total > 0)
            .or_else(|| self.pooled.get(ctx))
    }

    /// Probabilities (not logs) of the next token.
    pub fn next_probabilities(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let support = self.vocab.generable_len() as f64;
        let weight = 1.0 / self.order as f64;
        let keyed = self.by_input.get(input);
        let mut probs = vec![0.0; v];
        for i in 1..=self.order {
            let ctx_len = (i - 1).min(prefix.len());
            let ctx = &prefix[prefix.len() - ctx_len..];
            let (counts, total) = match self.counts_for(keyed, ctx) {
                Some(c) => (Some(&c.next), c.total as f64),
                None => (None, 0.0),
            };
            let denom = total + self.alpha * support;
            for (y, p) in probs.iter_mut().enumerate() {
                if y as TokenId == self.vocab.bos() {
                    continue;
                }
                let c = counts.map_or(0.0, |n| n[y] as f64);
                *p += weight * (c + self.alpha) / denom;
            }
        }
        probs
    }
}

impl Scorer for NGramScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_log_distribution(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let bos = self.vocab.bos() as usize;
        self.next_probabilities(input, prefix)
            .into_iter()
            .enumerate()
            .map(|(y, p)| if y == bos { LOG_ZERO } else { safe_ln(p) })
            .collect()
    }
}
