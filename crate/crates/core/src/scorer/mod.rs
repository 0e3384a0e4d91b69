//! Next-token scorers.
//!
//! A [`Scorer`] maps `(input, prefix)` to a log-distribution over the whole
//! vocabulary. Decoders treat scorers as opaque and never mutate them, so a
//! single scorer can serve many concurrent decode calls.

mod ensemble;
mod ngram;
mod table;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ensemble::{AveragingScorer, VotingScorer};
pub use ngram::{NGramModelFile, NGramScorer, TrainingPair};
pub use table::{ProbSpec, TableEntry, TableEntryFile, TableScorer, TableScorerSpec, TableSpecFile};

use crate::error::{Error, Result};
use crate::logmath::log_sum_exp;
use crate::vocab::{TokenId, Vocabulary, VocabularyFile};

pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Log-probabilities of every vocabulary entry as the next token after
    /// `prefix` (which begins with the start marker), given `input`.
    fn next_log_distribution(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;
}

pub type SharedScorer = Arc<dyn Scorer>;

/// Where a vocabulary comes from in a data file: a path or an inline object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VocabSource {
    Path(PathBuf),
    Inline(VocabularyFile),
}

impl VocabSource {
    pub fn load(&self, base_dir: &Path) -> Result<Vocabulary> {
        match self {
            VocabSource::Path(p) => Vocabulary::load(&base_dir.join(p)),
            VocabSource::Inline(v) => Vocabulary::from_file_repr(v.clone()),
        }
    }
}

/// Loads a scorer description: either a table specification or an n-gram
/// model artifact, distinguished by the presence of an `order` field.
pub fn scorer_from_json(value: &serde_json::Value, base_dir: &Path, label: &str) -> Result<SharedScorer> {
    let parse_err = |e: serde_json::Error| Error::Load {
        key: label.to_string(),
        reason: e.to_string(),
    };
    if value.get("order").is_some() {
        let file: NGramModelFile = serde_json::from_value(value.clone()).map_err(parse_err)?;
        Ok(Arc::new(NGramScorer::from_file_repr(file, base_dir)?))
    } else {
        let file: TableSpecFile = serde_json::from_value(value.clone()).map_err(parse_err)?;
        Ok(Arc::new(TableScorer::from_file_repr(file, base_dir)?))
    }
}

pub fn load_scorer(path: &Path) -> Result<SharedScorer> {
    let value: serde_json::Value = crate::io::read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    scorer_from_json(&value, base, &path.display().to_string())
}

/// Fails unless every scorer shares one vocabulary; returns it.
pub fn shared_vocab(components: &[SharedScorer]) -> Result<&Vocabulary> {
    let first = components
        .first()
        .ok_or_else(|| Error::config("at least one component scorer is required"))?;
    let vocab = first.vocab();
    if let Some(i) = components.iter().position(|c| c.vocab() != vocab) {
        return Err(Error::config(format!(
            "component {i} uses a different vocabulary from component 0"
        )));
    }
    Ok(vocab)
}

/// Deviation of `ln Σ p` from zero for a log-distribution.
pub fn normalization_error(dist: &[f64]) -> f64 {
    log_sum_exp(dist).abs()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Table scorer whose entries key on the prefix only (any input).
    pub fn table(vocab: &Arc<Vocabulary>, entries: &[(&[TokenId], &[f64])], fallback: Option<&[f64]>) -> SharedScorer {
        let n = vocab.len();
        let uniform: Vec<f64> = (0..n)
            .map(|t| if t as TokenId == vocab.bos() { 0.0 } else { 1.0 / (n - 1) as f64 })
            .collect();
        let spec = TableScorerSpec {
            vocab: vocab.clone(),
            entries: entries
                .iter()
                .map(|(prefix, probs)| TableEntry {
                    input: None,
                    prefix: prefix.to_vec(),
                    probs: probs.to_vec(),
                })
                .collect(),
            fallback: fallback.map(|f| f.to_vec()).unwrap_or(uniform),
        };
        Arc::new(TableScorer::from_spec(spec).unwrap())
    }

    pub fn probs(dist: &[f64]) -> Vec<f64> {
        dist.iter().map(|&l| crate::logmath::safe_exp(l)).collect()
    }
}
