use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Scorer, VocabSource};
use crate::error::{Error, Result};
use crate::logmath::safe_ln;
use crate::vocab::{TokenId, TokenRef, Vocabulary};

const SUM_TOLERANCE: f64 = 1e-9;

/// One explicit distribution. `input: None` matches any input.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub input: Option<Vec<TokenId>>,
    pub prefix: Vec<TokenId>,
    /// Probabilities indexed by token id.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TableScorerSpec {
    pub vocab: Arc<Vocabulary>,
    pub entries: Vec<TableEntry>,
    pub fallback: Vec<f64>,
}

/// A distribution in a spec file: token → probability, or `"uniform"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Named(String),
    Map(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<TokenRef>>,
    pub prefix: Vec<TokenRef>,
    pub probs: ProbSpec,
}

/// `{"vocab": <path or object>, "entries": [...], "fallback": {...}}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpecFile {
    pub vocab: VocabSource,
    pub entries: Vec<TableEntryFile>,
    pub fallback: ProbSpec,
}

/// Scorer backed by explicit per-`(input, prefix)` distributions, with a
/// fallback for everything else. Entries bound to a specific input take
/// precedence over input-agnostic ones.
#[derive(Debug, Clone)]
pub struct TableScorer {
    vocab: Arc<Vocabulary>,
    exact: HashMap<Vec<TokenId>, HashMap<Vec<TokenId>, Vec<f64>>>,
    any_input: HashMap<Vec<TokenId>, Vec<f64>>,
    fallback: Vec<f64>,
}

fn describe(vocab: &Vocabulary, input: Option<&[TokenId]>, prefix: &[TokenId]) -> String {
    let input = match input {
        Some(i) => format!("[{}]", vocab.render(i).join(" ")),
        None => "*".to_string(),
    };
    format!("entry (input={input}, prefix=[{}])", vocab.render(prefix).join(" "))
}

/// Validates a probability vector and converts it to normalized log form.
fn to_log_distribution(vocab: &Vocabulary, probs: &[f64], key: &str) -> Result<Vec<f64>> {
    let load_err = |reason: String| Error::Load {
        key: key.to_string(),
        reason,
    };
    if probs.len() != vocab.len() {
        return Err(load_err(format!(
            "distribution has {} entries, vocabulary has {}",
            probs.len(),
            vocab.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(load_err(format!("invalid probability {p}")));
    }
    if probs[vocab.bos() as usize] > 0.0 {
        return Err(load_err("start token must have zero probability".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(load_err(format!("probabilities sum to {sum:.9}, expected 1")));
    }
    Ok(probs.iter().map(|&p| safe_ln(p / sum)).collect())
}

fn uniform(vocab: &Vocabulary) -> Vec<f64> {
    let share = 1.0 / vocab.generable_len() as f64;
    (0..vocab.len())
        .map(|t| if t as TokenId == vocab.bos() { 0.0 } else { share })
        .collect()
}

fn resolve_probs(vocab: &Vocabulary, spec: &ProbSpec, key: &str) -> Result<Vec<f64>> {
    match spec {
        ProbSpec::Named(name) if name == "uniform" => Ok(uniform(vocab)),
        ProbSpec::Named(name) => Err(Error::Load {
            key: key.to_string(),
            reason: format!("unknown named distribution {name:?}"),
        }),
        ProbSpec::Map(map) => {
            let mut probs = vec![0.0; vocab.len()];
            for (tok, &p) in map {
                let id = vocab.id(tok).ok_or_else(|| Error::Load {
                    key: key.to_string(),
                    reason: format!("unknown token {tok:?}"),
                })?;
                probs[id as usize] = p;
            }
            Ok(probs)
        }
    }
}

/// Prefixes in spec files may omit the leading start marker.
fn framed_prefix(vocab: &Vocabulary, mut prefix: Vec<TokenId>) -> Vec<TokenId> {
    if prefix.first() != Some(&vocab.bos()) {
        prefix.insert(0, vocab.bos());
    }
    prefix
}

impl TableScorer {
    pub fn from_spec(spec: TableScorerSpec) -> Result<Self> {
        let vocab = spec.vocab;
        let fallback = to_log_distribution(&vocab, &spec.fallback, "fallback")?;
        let mut exact = HashMap::new();
        let mut any_input = HashMap::new();
        for entry in spec.entries {
            let prefix = framed_prefix(&vocab, entry.prefix);
            let key = describe(&vocab, entry.input.as_deref(), &prefix);
            let dist = to_log_distribution(&vocab, &entry.probs, &key)?;
            let duplicate = match entry.input {
                Some(input) => exact
                    .entry(input)
                    .or_insert_with(HashMap::new)
                    .insert(prefix, dist)
                    .is_some(),
                None => any_input.insert(prefix, dist).is_some(),
            };
            if duplicate {
                return Err(Error::Load {
                    key,
                    reason: "duplicate entry".into(),
                });
            }
        }
        Ok(Self {
            vocab,
            exact,
            any_input,
            fallback,
        })
    }

    /// A scorer that is uniform over every generable token.
    pub fn uniform(vocab: Arc<Vocabulary>) -> Self {
        let fallback = uniform(&vocab);
        Self::from_spec(TableScorerSpec {
            vocab,
            entries: Vec::new(),
            fallback,
        })
        .expect("uniform distribution is valid")
    }

    pub fn from_file_repr(file: TableSpecFile, base_dir: &Path) -> Result<Self> {
        let vocab = Arc::new(file.vocab.load(base_dir)?);
        let fallback = resolve_probs(&vocab, &file.fallback, "fallback")?;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (i, e) in file.entries.iter().enumerate() {
            let key = format!("entries[{i}]");
            let at = |err: Error| Error::Load {
                key: key.clone(),
                reason: err.to_string(),
            };
            let input = e
                .input
                .as_ref()
                .map(|t| vocab.resolve_seq(t))
                .transpose()
                .map_err(at)?;
            let prefix = vocab.resolve_seq(&e.prefix).map_err(at)?;
            let probs = resolve_probs(&vocab, &e.probs, &key)?;
            entries.push(TableEntry { input, prefix, probs });
        }
        Self::from_spec(TableScorerSpec {
            vocab,
            entries,
            fallback,
        })
    }

    /// Serializable form with an inline vocabulary. Zero probabilities are
    /// omitted from the maps.
    pub fn to_file_repr(&self) -> TableSpecFile {
        let vocab = &self.vocab;
        let to_map = |dist: &[f64]| {
            let map = dist
                .iter()
                .enumerate()
                .filter(|(_, l)| !crate::logmath::is_log_zero(**l))
                .map(|(i, l)| (vocab.tokens()[i].clone(), l.exp()))
                .collect();
            ProbSpec::Map(map)
        };
        let to_refs = |ids: &[TokenId]| vocab.render(ids).into_iter().map(TokenRef::Text).collect();
        let mut entries: Vec<TableEntryFile> = self
            .exact
            .iter()
            .flat_map(|(input, by_prefix)| by_prefix.iter().map(move |(prefix, dist)| (input, prefix, dist)))
            .map(|(input, prefix, dist)| TableEntryFile {
                input: Some(to_refs(input)),
                prefix: to_refs(prefix),
                probs: to_map(dist),
            })
            .chain(self.any_input.iter().map(|(prefix, dist)| TableEntryFile {
                input: None,
                prefix: to_refs(prefix),
                probs: to_map(dist),
            }))
            .collect();
        entries.sort_by(|a, b| {
            let key = |e: &TableEntryFile| (serde_json::to_string(&e.input).unwrap_or_default(), serde_json::to_string(&e.prefix).unwrap_or_default());
            key(a).cmp(&key(b))
        });
        TableSpecFile {
            vocab: VocabSource::Inline(vocab.to_file_repr()),
            entries,
            fallback: to_map(&self.fallback),
        }
    }

    pub fn shared_vocab(&self) -> Arc<Vocabulary> {
        self.vocab.clone()
    }
}

impl Scorer for TableScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_log_distribution(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        if let Some(d) = self.exact.get(input).and_then(|m| m.get(prefix)) {
            return d.clone();
        }
        if let Some(d) = self.any_input.get(prefix) {
            return d.clone();
        }
        self.fallback.clone()
    }
}
