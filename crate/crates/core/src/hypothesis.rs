use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// A partial or complete output sequence with its accumulated log-score.
///
/// `tokens[0]` is always the start marker. The end marker, when present, is
/// the last token and `finished` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// The initial hypothesis `<bos>` with probability one.
    pub fn start(bos: TokenId) -> Self {
        Self {
            tokens: vec![bos],
            log_score: 0.0,
            finished: false,
        }
    }

    pub fn extend(&self, token: TokenId, log_score: f64, eos: TokenId) -> Self {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        Self {
            tokens,
            log_score,
            finished: token == eos,
        }
    }

    /// Number of generated tokens (everything after the start marker).
    pub fn generated_len(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    pub fn last(&self) -> TokenId {
        *self.tokens.last().expect("hypothesis always holds the start token")
    }
}

/// Selection score: the log-score, divided by the generated length when
/// `length_normalize` is set (log of the geometric mean of step probabilities).
pub fn normalized_score(h: &Hypothesis, length_normalize: bool) -> Result<f64> {
    let n = h.generated_len();
    if n == 0 {
        return Err(Error::EmptyGeneration);
    }
    Ok(if length_normalize {
        h.log_score / n as f64
    } else {
        h.log_score
    })
}

/// Beam order: higher score first, then ascending token sequence.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_score
        .total_cmp(&a.log_score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// A size-bounded, duplicate-free collection of hypotheses kept in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    entries: Vec<Hypothesis>,
    capacity: usize,
}

impl Beam {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "beam capacity must be positive");
        Self {
            entries: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// A beam holding only `h`.
    pub fn singleton(h: Hypothesis, capacity: usize) -> Self {
        let mut beam = Self::new(capacity);
        beam.entries.push(h);
        beam
    }

    /// Keeps the best `capacity` candidates under [`rank_order`]. Repeated
    /// token sequences keep their highest score.
    pub fn top_k<I: IntoIterator<Item = Hypothesis>>(candidates: I, capacity: usize) -> Self {
        assert!(capacity > 0, "beam capacity must be positive");
        let mut best: HashMap<Vec<TokenId>, Hypothesis> = HashMap::new();
        for h in candidates {
            match best.get(&h.tokens) {
                Some(existing) if existing.log_score >= h.log_score => {}
                _ => {
                    best.insert(h.tokens.clone(), h);
                }
            }
        }
        let mut entries: Vec<Hypothesis> = best.into_values().collect();
        entries.sort_by(rank_order);
        entries.truncate(capacity);
        Self { entries, capacity }
    }

    /// Wraps entries that the caller has already ranked and deduplicated.
    pub(crate) fn from_ranked(mut entries: Vec<Hypothesis>, capacity: usize) -> Self {
        entries.truncate(capacity);
        Self { entries, capacity }
    }

    /// Inserts `h`, evicting the worst entry when over capacity. An existing
    /// entry with the same tokens keeps the higher score.
    pub fn insert(&mut self, h: Hypothesis) {
        if let Some(pos) = self.entries.iter().position(|e| e.tokens == h.tokens) {
            if self.entries[pos].log_score >= h.log_score {
                return;
            }
            self.entries.remove(pos);
        }
        let at = self
            .entries
            .binary_search_by(|e| rank_order(e, &h))
            .unwrap_or_else(|i| i);
        if at >= self.capacity {
            return;
        }
        self.entries.insert(at, h);
        self.entries.truncate(self.capacity);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Hypothesis] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Hypothesis> {
        self.entries.iter()
    }

    pub fn into_entries(self) -> Vec<Hypothesis> {
        self.entries
    }

    pub fn contains(&self, tokens: &[TokenId]) -> bool {
        self.entries.iter().any(|e| e.tokens == tokens)
    }
}

impl<'a> IntoIterator for &'a Beam {
    type Item = &'a Hypothesis;
    type IntoIter = std::slice::Iter<'a, Hypothesis>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
