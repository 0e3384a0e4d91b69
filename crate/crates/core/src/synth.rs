//! Seeded synthetic fixtures: random table scorers and small translation
//! registries with known gold outputs. All randomness in the crate lives here.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::paths::{DirectionFile, ModelRegistry, RegistryManifest, TranslationPath};
use crate::scorer::{SharedScorer, TableEntry, TableScorer, TableScorerSpec};
use crate::vocab::{TokenId, Vocabulary};

pub use rand::{Rng, SeedableRng};
pub type FixtureRng = ChaCha8Rng;

pub fn rng(seed: u64) -> FixtureRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `["<s>", "</s>", "w0", "w1", ...]` with `content` content tokens.
pub fn vocabulary(content: usize) -> Arc<Vocabulary> {
    let names: Vec<String> = (0..content).map(|i| format!("w{i}")).collect();
    Arc::new(Vocabulary::with_content(&names).expect("synthetic vocabulary is valid"))
}

/// A random distribution over every token except `<s>`. With `sparsity > 0`
/// some entries are zeroed, but at least one entry stays positive.
pub fn random_distribution(rng: &mut FixtureRng, vocab: &Vocabulary, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..vocab.len())
        .map(|t| {
            if t as TokenId == vocab.bos() || rng.gen_bool(sparsity) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let keep = vocab.generable().nth(rng.gen_range(0..vocab.generable_len())).unwrap();
        w[keep as usize] = 1.0;
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Every `<s>`-framed prefix of content tokens with at most `max_depth`
/// generated tokens.
pub fn content_prefixes(vocab: &Vocabulary, max_depth: usize) -> Vec<Vec<TokenId>> {
    let content: Vec<TokenId> = vocab.generable().filter(|&t| t != vocab.eos()).collect();
    let mut out = vec![vec![vocab.bos()]];
    let mut frontier = out.clone();
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for p in &frontier {
            for &c in &content {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// A table scorer with an independent random distribution for every prefix
/// reachable within `max_len` generated tokens, regardless of input.
pub fn random_table_scorer(rng: &mut FixtureRng, vocab: &Arc<Vocabulary>, max_len: usize, sparsity: f64) -> SharedScorer {
    let entries = content_prefixes(vocab, max_len.saturating_sub(1))
        .into_iter()
        .map(|prefix| TableEntry {
            input: None,
            probs: random_distribution(rng, vocab, sparsity),
            prefix,
        })
        .collect();
    let fallback = random_distribution(rng, vocab, 0.0);
    Arc::new(
        TableScorer::from_spec(TableScorerSpec {
            vocab: vocab.clone(),
            entries,
            fallback,
        })
        .expect("random distributions are normalized"),
    )
}

/// A translation task over a registry, with gold references.
#[derive(Debug)]
pub struct PivotTask {
    pub registry: ModelRegistry,
    /// The registry's table scorers, for writing it back out.
    pub tables: Vec<(String, String, Arc<TableScorer>)>,
    pub src: String,
    pub tgt: String,
    pub paths: Vec<TranslationPath>,
    pub inputs: Vec<Vec<TokenId>>,
    /// `<s>`-framed gold outputs, aligned with `inputs`.
    pub references: Vec<Vec<TokenId>>,
}

struct TableBuilder {
    vocab: Arc<Vocabulary>,
    entries: Vec<TableEntry>,
}

impl TableBuilder {
    fn new(vocab: &Arc<Vocabulary>) -> Self {
        Self {
            vocab: vocab.clone(),
            entries: Vec::new(),
        }
    }

    fn add(&mut self, input: &[TokenId], prefix: Vec<TokenId>, probs: Vec<f64>) {
        self.entries.push(TableEntry {
            input: Some(input.to_vec()),
            prefix,
            probs,
        });
    }

    /// Follows `output` (content tokens) then `</s>`, putting `p` on each
    /// gold token and spreading the rest at random.
    fn chain(&mut self, rng: &mut FixtureRng, input: &[TokenId], output: &[TokenId], p: f64) {
        let mut prefix = vec![self.vocab.bos()];
        for &t in output.iter().chain(std::iter::once(&self.vocab.eos())) {
            let probs = peaked(rng, &self.vocab, &[(t, p)]);
            self.add(input, prefix.clone(), probs);
            prefix.push(t);
        }
    }

    fn build(self) -> Arc<TableScorer> {
        let fallback = (0..self.vocab.len())
            .map(|t| if t as TokenId == self.vocab.bos() { 0.0 } else { 1.0 / self.vocab.generable_len() as f64 })
            .collect();
        Arc::new(
            TableScorer::from_spec(TableScorerSpec {
                vocab: self.vocab,
                entries: self.entries,
                fallback,
            })
            .expect("fixture distributions are normalized"),
        )
    }
}

fn assemble(
    tables: Vec<(&str, &str, Arc<TableScorer>)>,
    paths: Vec<TranslationPath>,
    inputs: Vec<Vec<TokenId>>,
    references: Vec<Vec<TokenId>>,
) -> PivotTask {
    let tables: Vec<(String, String, Arc<TableScorer>)> =
        tables.into_iter().map(|(s, t, x)| (s.to_string(), t.to_string(), x)).collect();
    let registry = ModelRegistry::new(
        tables
            .iter()
            .map(|(s, t, x)| (s.clone(), t.clone(), x.clone() as SharedScorer))
            .collect(),
    )
    .expect("fixture registry is consistent");
    PivotTask {
        registry,
        tables,
        src: "it".into(),
        tgt: "nl".into(),
        paths,
        inputs,
        references,
    }
}

impl PivotTask {
    /// Registry manifest with every scorer inline.
    pub fn manifest(&self) -> RegistryManifest {
        RegistryManifest {
            directions: self
                .tables
                .iter()
                .map(|(s, t, x)| DirectionFile {
                    src: s.clone(),
                    tgt: t.clone(),
                    scorer: serde_json::to_value(x.to_file_repr()).expect("table specs serialize"),
                })
                .collect(),
        }
    }

    /// `{"src": [...], "ref": [...]}` lines with token strings.
    pub fn input_lines(&self) -> Vec<serde_json::Value> {
        let vocab = self.registry.vocab();
        self.inputs
            .iter()
            .zip(&self.references)
            .map(|(x, r)| serde_json::json!({"src": vocab.render(x), "ref": vocab.render(r)}))
            .collect()
    }

    /// Writes `registry.json` and `inputs.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        crate::io::write_json(&dir.join("registry.json"), &self.manifest())?;
        crate::io::write_jsonl(&dir.join("inputs.jsonl"), &self.input_lines())
    }

    pub fn path_spec(&self) -> String {
        self.paths.iter().map(|p| p.label()).collect::<Vec<_>>().join(",")
    }
}

/// Puts the listed masses on their tokens and spreads what is left at
/// random over the other generable tokens.
fn peaked(rng: &mut FixtureRng, vocab: &Vocabulary, fixed: &[(TokenId, f64)]) -> Vec<f64> {
    let mut probs = vec![0.0; vocab.len()];
    let rest: Vec<TokenId> = vocab.generable().filter(|t| fixed.iter().all(|(f, _)| f != t)).collect();
    let weights: Vec<f64> = rest.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let left = 1.0 - fixed.iter().map(|(_, p)| p).sum::<f64>();
    let total: f64 = weights.iter().sum();
    for (&t, w) in rest.iter().zip(&weights) {
        probs[t as usize] = left * w / total;
    }
    for &(t, p) in fixed {
        probs[t as usize] = p;
    }
    probs
}

fn frame(vocab: &Vocabulary, content: &[TokenId]) -> Vec<TokenId> {
    let mut v = vec![vocab.bos()];
    v.extend_from_slice(content);
    v.push(vocab.eos());
    v
}

fn content_tokens(vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.generable().filter(|&t| t != vocab.eos()).collect()
}

/// A random content sequence not yet in `seen`.
fn fresh_sequence(
    rng: &mut FixtureRng,
    content: &[TokenId],
    len: std::ops::RangeInclusive<usize>,
    distinct: bool,
    seen: &mut HashSet<Vec<TokenId>>,
) -> Vec<TokenId> {
    loop {
        let n = rng.gen_range(len.clone());
        let s: Vec<TokenId> = if distinct {
            content.choose_multiple(rng, n).copied().collect()
        } else {
            (0..n).map(|_| *content.choose(rng).expect("non-empty")).collect()
        };
        if seen.insert(s.clone()) {
            return s;
        }
    }
}

/// `n` sentences over three directions (`it->nl`, `it->en`, `en->nl`).
/// Each direction prefers the gold continuation along its own path; the
/// direct and pivot paths may still disagree under beam search.
pub fn distillation_task(seed: u64, n: usize) -> PivotTask {
    let mut rng = rng(seed);
    let vocab = vocabulary(20);
    let content = content_tokens(&vocab);
    let (mut seen_src, mut seen_en, mut seen_nl) = (HashSet::new(), HashSet::new(), HashSet::new());
    let mut direct = TableBuilder::new(&vocab);
    let mut to_en = TableBuilder::new(&vocab);
    let mut from_en = TableBuilder::new(&vocab);
    let mut inputs = Vec::new();
    let mut references = Vec::new();
    for _ in 0..n {
        let src = fresh_sequence(&mut rng, &content, 3..=4, false, &mut seen_src);
        let en = fresh_sequence(&mut rng, &content, 3..=5, false, &mut seen_en);
        let nl = fresh_sequence(&mut rng, &content, 3..=5, true, &mut seen_nl);
        direct.chain(&mut rng, &src, &nl, 0.6);
        to_en.chain(&mut rng, &src, &en, 0.8);
        from_en.chain(&mut rng, &en, &nl, 0.7);
        references.push(frame(&vocab, &nl));
        inputs.push(src);
    }
    assemble(
        vec![
            ("it", "nl", direct.build()),
            ("it", "en", to_en.build()),
            ("en", "nl", from_en.build()),
        ],
        vec![TranslationPath::direct("it", "nl"), TranslationPath::pivot("it", "en", "nl").expect("distinct")],
        inputs,
        references,
    )
}

/// Three teachers that agree except at the second target token, where the
/// `de` pivot path proposes a different word. Direct and `en` pivot always
/// agree, so a vote settles on their output.
pub fn disagreement_task() -> PivotTask {
    let mut rng = rng(0);
    let vocab = vocabulary(10);
    let mut direct = TableBuilder::new(&vocab);
    let mut legs: Vec<TableBuilder> = (0..4).map(|_| TableBuilder::new(&vocab)).collect();
    let mut inputs = Vec::new();
    let mut references = Vec::new();
    let t = |i: usize| (i + 2) as TokenId;
    for i in 0..4 {
        let src = vec![t(i), t(i + 4)];
        let en = vec![t(i), t(i)];
        let de = vec![t(i + 4), t(i + 4)];
        let agreed = vec![t(i), t(i + 1), t(i + 2)];
        let other = vec![t(i), t(i + 5), t(i + 2)];
        direct.chain(&mut rng, &src, &agreed, 1.0);
        legs[0].chain(&mut rng, &src, &en, 1.0);
        legs[1].chain(&mut rng, &en, &agreed, 1.0);
        legs[2].chain(&mut rng, &src, &de, 1.0);
        legs[3].chain(&mut rng, &de, &other, 1.0);
        references.push(frame(&vocab, &agreed));
        inputs.push(src);
    }
    let mut legs = legs.into_iter().map(TableBuilder::build);
    let mut next = || legs.next().expect("four legs");
    assemble(
        vec![
            ("it", "nl", direct.build()),
            ("it", "en", next()),
            ("en", "nl", next()),
            ("it", "de", next()),
            ("de", "nl", next()),
        ],
        vec![
            TranslationPath::direct("it", "nl"),
            TranslationPath::pivot("it", "en", "nl").expect("distinct"),
            TranslationPath::pivot("it", "de", "nl").expect("distinct"),
        ],
        inputs,
        references,
    )
}

/// One direct and two pivot components over a gold target. Every target
/// position is corrupted by exactly one component, which there prefers a
/// fixed wrong token over the gold one; the other two prefer gold.
pub fn noisy_pivot_task(seed: u64, n: usize) -> PivotTask {
    let mut rng = rng(seed);
    let vocab = vocabulary(12);
    let content = content_tokens(&vocab);
    let eos = vocab.eos();
    let (mut seen_src, mut seen_mid, mut seen_tgt) = (HashSet::new(), HashSet::new(), HashSet::new());
    // direct, en->nl, de->nl, it->en, it->de
    let mut tables: Vec<TableBuilder> = (0..5).map(|_| TableBuilder::new(&vocab)).collect();
    let mut inputs = Vec::new();
    let mut references = Vec::new();
    for _ in 0..n {
        let src = fresh_sequence(&mut rng, &content, 3..=4, false, &mut seen_src);
        let en = fresh_sequence(&mut rng, &content, 3..=4, false, &mut seen_mid);
        let de = fresh_sequence(&mut rng, &content, 3..=4, false, &mut seen_mid);
        let gold = fresh_sequence(&mut rng, &content, 4..=6, true, &mut seen_tgt);
        let wrong: Vec<TokenId> = gold
            .iter()
            .map(|&g| **content.iter().filter(|&&c| c != g).collect::<Vec<_>>().choose(&mut rng).expect("content"))
            .collect();
        let mut positions: Vec<usize> = (0..gold.len()).collect();
        positions.shuffle(&mut rng);
        let corrupter: Vec<usize> = {
            let mut c = vec![0; gold.len()];
            for (i, &p) in positions.iter().enumerate() {
                c[p] = i % 3;
            }
            c
        };
        tables[3].chain(&mut rng, &src, &en, 1.0);
        tables[4].chain(&mut rng, &src, &de, 1.0);
        for (k, key) in [&src, &en, &de].into_iter().enumerate() {
            // every prefix mixing gold and wrong tokens
            let mut frontier = vec![vec![vocab.bos()]];
            for t in 0..=gold.len() {
                let mut next = Vec::new();
                for prefix in &frontier {
                    let probs = if t == gold.len() {
                        peaked(&mut rng, &vocab, &[(eos, 0.9)])
                    } else if corrupter[t] == k {
                        let pw = rng.gen_range(0.45..0.6);
                        let pg = rng.gen_range(0.2..0.3);
                        peaked(&mut rng, &vocab, &[(wrong[t], pw), (gold[t], pg), (eos, 0.02)])
                    } else {
                        let pg = rng.gen_range(0.55..0.75);
                        let pw = rng.gen_range(0.05..0.12);
                        peaked(&mut rng, &vocab, &[(gold[t], pg), (wrong[t], pw), (eos, 0.02)])
                    };
                    tables[k].add(key, prefix.clone(), probs);
                    if t < gold.len() {
                        for y in [gold[t], wrong[t]] {
                            let mut q = prefix.clone();
                            q.push(y);
                            next.push(q);
                        }
                    }
                }
                frontier = next;
            }
        }
        references.push(frame(&vocab, &gold));
        inputs.push(src);
    }
    let names = [("it", "nl"), ("en", "nl"), ("de", "nl"), ("it", "en"), ("it", "de")];
    assemble(
        names.into_iter().zip(tables).map(|((s, t), b)| (s, t, b.build())).collect(),
        vec![
            TranslationPath::direct("it", "nl"),
            TranslationPath::pivot("it", "en", "nl").expect("distinct"),
            TranslationPath::pivot("it", "de", "nl").expect("distinct"),
        ],
        inputs,
        references,
    )
}
