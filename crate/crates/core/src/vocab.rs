use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// A finite token inventory with reserved start and end markers.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
}

/// On-disk form: `{"tokens": [...], "bos": "<s>", "eos": "</s>"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub tokens: Vec<String>,
    pub bos: String,
    pub eos: String,
}

/// A token written in a data file, either by string or by index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenRef {
    Id(TokenId),
    Text(String),
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, bos: &str, eos: &str) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::Vocab(format!(
                "need at least 3 tokens (start, end, one content token), got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let lookup = |name: &str, what: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("{what} token {name:?} is not in the token list")))
        };
        let bos_id = lookup(bos, "start")?;
        let eos_id = lookup(eos, "end")?;
        if bos_id == eos_id {
            return Err(Error::Vocab("start and end tokens must differ".into()));
        }
        Ok(Self {
            tokens,
            index,
            bos: bos_id,
            eos: eos_id,
        })
    }

    /// Builds `["<s>", "</s>", content...]`.
    pub fn with_content<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        let mut tokens = vec!["<s>".to_string(), "</s>".to_string()];
        tokens.extend(content.iter().map(|s| s.as_ref().to_string()));
        Self::new(tokens, "<s>", "</s>")
    }

    pub fn from_file_repr(file: VocabularyFile) -> Result<Self> {
        Self::new(file.tokens, &file.bos, &file.eos)
    }

    pub fn to_file_repr(&self) -> VocabularyFile {
        VocabularyFile {
            tokens: self.tokens.clone(),
            bos: self.tokens[self.bos as usize].clone(),
            eos: self.tokens[self.eos as usize].clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabularyFile = crate::io::read_json(path)?;
        Self::from_file_repr(file)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Every token that may follow a prefix (all but the start marker).
    pub fn generable(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as TokenId).filter(move |&t| t != self.bos)
    }

    /// Size of the generable set, `|V| - 1`.
    pub fn generable_len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn resolve(&self, token: &TokenRef) -> Result<TokenId> {
        match token {
            TokenRef::Id(id) if (*id as usize) < self.tokens.len() => Ok(*id),
            TokenRef::Id(id) => Err(Error::Vocab(format!(
                "token id {id} out of range for vocabulary of size {}",
                self.tokens.len()
            ))),
            TokenRef::Text(s) => self
                .id(s)
                .ok_or_else(|| Error::Vocab(format!("unknown token {s:?}"))),
        }
    }

    pub fn resolve_seq(&self, tokens: &[TokenRef]) -> Result<Vec<TokenId>> {
        tokens.iter().map(|t| self.resolve(t)).collect()
    }

    pub fn render(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("<unk:{id}>"))
            })
            .collect()
    }

    /// Drops start and end markers.
    pub fn content(&self, ids: &[TokenId]) -> Vec<TokenId> {
        ids.iter().copied().filter(|&t| !self.is_special(t)).collect()
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.bos == other.bos && self.eos == other.eos
    }
}

impl Eq for Vocabulary {}
