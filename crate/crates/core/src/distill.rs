//! Ensemble-then-distill: decode a corpus with a teacher, train an n-gram
//! student on the outputs, and compare students.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam_search::beam_search;
use crate::config::{DecodeConfig, DecodeResult};
use crate::ebbs::{ebbs_decode, EbbsOptions};
use crate::error::{Error, Result};
use crate::logmath::is_log_zero;
use crate::metrics::{dataset_entropy, Bleu};
use crate::paths::{make_component_scorers, translate, ModelRegistry, TranslationPath};
use crate::scorer::{NGramScorer, Scorer, TrainingPair};
use crate::vocab::{TokenId, TokenRef, Vocabulary};

/// Which teacher produced a pseudo-label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Direct,
    Pivot(String),
    Ebbs,
    UnionMember,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Direct => f.write_str("direct"),
            Provenance::Pivot(lang) => write!(f, "pivot:{lang}"),
            Provenance::Ebbs => f.write_str("ebbs"),
            Provenance::UnionMember => f.write_str("union-member"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Provenance::Direct),
            "ebbs" => Ok(Provenance::Ebbs),
            "union-member" => Ok(Provenance::UnionMember),
            _ => match s.strip_prefix("pivot:") {
                Some(lang) if !lang.is_empty() => Ok(Provenance::Pivot(lang.into())),
                _ => Err(Error::data(format!("unknown provenance {s:?}"))),
            },
        }
    }
}

impl From<&TranslationPath> for Provenance {
    fn from(p: &TranslationPath) -> Self {
        match p {
            TranslationPath::Direct { .. } => Provenance::Direct,
            TranslationPath::Pivot { pivot, .. } => Provenance::Pivot(pivot.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoRecord {
    pub src: Vec<TokenId>,
    /// `<s>`-framed teacher output.
    pub tgt: Vec<TokenId>,
    pub provenance: Provenance,
}

/// JSONL line of a persisted pseudo-label set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoRecordFile {
    pub src: Vec<TokenRef>,
    pub tgt: Vec<TokenRef>,
    pub provenance: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub records: Vec<PseudoRecord>,
    /// Inputs the teacher failed to decode.
    pub failures: usize,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_file_repr(&self, vocab: &Vocabulary) -> Vec<PseudoRecordFile> {
        let refs = |ids: &[TokenId]| vocab.render(ids).into_iter().map(TokenRef::Text).collect();
        self.records
            .iter()
            .map(|r| PseudoRecordFile {
                src: refs(&r.src),
                tgt: refs(&r.tgt),
                provenance: r.provenance.to_string(),
            })
            .collect()
    }

    pub fn from_file_repr(vocab: &Vocabulary, lines: &[PseudoRecordFile]) -> Result<Self> {
        let records = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let r = PseudoRecord {
                    src: vocab.resolve_seq(&l.src)?,
                    tgt: vocab.resolve_seq(&l.tgt)?,
                    provenance: l.provenance.parse()?,
                };
                check_target(vocab, &r.tgt).map_err(|e| Error::data(format!("record {i}: {e}")))?;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Ok(Self { records, failures: 0 })
    }
}

fn check_target(vocab: &Vocabulary, tgt: &[TokenId]) -> Result<()> {
    let ok = tgt.len() >= 2
        && tgt[0] == vocab.bos()
        && tgt[tgt.len() - 1] == vocab.eos()
        && tgt.iter().all(|&t| (t as usize) < vocab.len());
    if ok {
        Ok(())
    } else {
        Err(Error::data("pseudo target must start with <s> and end with </s>"))
    }
}

/// Decodes every input with `decode`, in parallel, keeping input order.
/// Failed decodes are logged, counted and skipped.
pub fn emit_pseudo_labels<F>(decode: F, inputs: &[Vec<TokenId>], provenance: &Provenance) -> Result<PseudoLabelSet>
where
    F: Fn(&[TokenId]) -> Result<DecodeResult> + Sync,
{
    if inputs.is_empty() {
        return Err(Error::data("no inputs to pseudo-label"));
    }
    let results: Vec<Result<DecodeResult>> = inputs.par_iter().map(|x| decode(x)).collect();
    let mut set = PseudoLabelSet::default();
    let mut last_error = None;
    for (i, (x, r)) in inputs.iter().zip(results).enumerate() {
        match r {
            Ok(r) => set.records.push(PseudoRecord {
                src: x.clone(),
                tgt: r.output.tokens,
                provenance: provenance.clone(),
            }),
            Err(e) => {
                log::warn!("input {i}: {provenance} teacher failed: {e}");
                set.failures += 1;
                last_error = Some(e);
            }
        }
    }
    if set.records.is_empty() {
        let e = last_error.expect("inputs were non-empty");
        return Err(Error::Decode(format!("every input failed to decode; last error: {e}")));
    }
    Ok(set)
}

/// Concatenates teacher outputs. Each teacher must cover the same inputs.
pub fn build_union_dataset(teacher_sets: &[PseudoLabelSet]) -> Result<PseudoLabelSet> {
    let first = teacher_sets
        .first()
        .ok_or_else(|| Error::data("union needs at least one teacher set"))?;
    let covered = |s: &PseudoLabelSet| s.records.iter().map(|r| r.src.clone()).collect::<BTreeSet<_>>();
    let expected = covered(first);
    for (k, set) in teacher_sets.iter().enumerate().skip(1) {
        let got = covered(set);
        if got != expected {
            let missing: Vec<String> = expected
                .symmetric_difference(&got)
                .map(|x| format!("{x:?}"))
                .collect();
            return Err(Error::data(format!(
                "teacher {k} covers different inputs from teacher 0; mismatched: {}",
                missing.join(", ")
            )));
        }
    }
    Ok(PseudoLabelSet {
        records: teacher_sets.iter().flat_map(|s| s.records.iter().cloned()).collect(),
        failures: teacher_sets.iter().map(|s| s.failures).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdLoss {
    /// `-Σ ln p` over the generated tokens, end marker included.
    pub loss: f64,
    /// Some target token had zero probability; its term is the sentinel
    /// magnitude.
    pub sentinel_hit: bool,
}

/// Sequence-level distillation loss of `student` on one pseudo-label.
pub fn kd_loss(student: &dyn Scorer, record: &PseudoRecord) -> Result<KdLoss> {
    check_target(student.vocab(), &record.tgt)?;
    let mut loss = 0.0;
    let mut sentinel_hit = false;
    for t in 1..record.tgt.len() {
        let lp = student.next_log_distribution(&record.src, &record.tgt[..t])[record.tgt[t] as usize];
        sentinel_hit |= is_log_zero(lp);
        loss -= lp;
    }
    Ok(KdLoss { loss, sentinel_hit })
}

/// Mean per-record loss.
pub fn dataset_kd_loss(student: &dyn Scorer, set: &PseudoLabelSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::data("empty pseudo-label set"));
    }
    let total = set
        .records
        .iter()
        .map(|r| kd_loss(student, r).map(|l| l.loss))
        .sum::<Result<f64>>()?;
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub order: usize,
    pub alpha: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { order: 3, alpha: 0.1 }
    }
}

pub fn train_student(vocab: Arc<Vocabulary>, dataset: &PseudoLabelSet, config: StudentConfig) -> Result<NGramScorer> {
    if dataset.is_empty() {
        return Err(Error::data("cannot train a student on an empty dataset"));
    }
    let pairs: Vec<TrainingPair> = dataset
        .records
        .iter()
        .map(|r| TrainingPair {
            src: r.src.clone(),
            tgt: r.tgt.clone(),
        })
        .collect();
    NGramScorer::train(vocab, &pairs, config.order, config.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    Direct,
    Union,
    Ebbs,
}

impl DistillMode {
    pub const ALL: [DistillMode; 3] = [DistillMode::Direct, DistillMode::Union, DistillMode::Ebbs];

    pub fn name(self) -> &'static str {
        match self {
            DistillMode::Direct => "direct",
            DistillMode::Union => "union",
            DistillMode::Ebbs => "ebbs",
        }
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown distillation mode {s:?} (expected direct, union or ebbs)")))
    }
}

/// Teacher settings shared by every distillation mode.
#[derive(Debug, Clone)]
pub struct TeacherSetup<'a> {
    pub registry: &'a ModelRegistry,
    /// Ensemble components; the first direct path is the direct teacher.
    pub paths: &'a [TranslationPath],
    pub config: DecodeConfig,
    pub options: EbbsOptions,
}

impl TeacherSetup<'_> {
    pub fn ebbs_decode(&self, input: &[TokenId]) -> Result<DecodeResult> {
        let components = make_component_scorers(self.registry, self.paths, input, &self.config)?;
        ebbs_decode(&components, input, &self.config, self.options)
    }

    /// Pseudo-labels for `inputs` under `mode`.
    pub fn pseudo_labels(&self, mode: DistillMode, inputs: &[Vec<TokenId>]) -> Result<PseudoLabelSet> {
        match mode {
            DistillMode::Direct => {
                let path = self
                    .paths
                    .iter()
                    .find(|p| matches!(p, TranslationPath::Direct { .. }))
                    .ok_or_else(|| Error::config("direct distillation needs a direct path"))?;
                emit_pseudo_labels(|x| translate(self.registry, path, x, &self.config), inputs, &Provenance::Direct)
            }
            DistillMode::Union => {
                let sets = self
                    .paths
                    .iter()
                    .map(|p| emit_pseudo_labels(|x| translate(self.registry, p, x, &self.config), inputs, &p.into()))
                    .collect::<Result<Vec<_>>>()?;
                build_union_dataset(&sets)
            }
            DistillMode::Ebbs => emit_pseudo_labels(|x| self.ebbs_decode(x), inputs, &Provenance::Ebbs),
        }
    }
}

/// An input with an optional `<s>`-framed reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillExample {
    pub src: Vec<TokenId>,
    pub reference: Option<Vec<TokenId>>,
}

/// One line of the comparison report. `bleu` is on the 0-100 scale and
/// present only when every example has a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub bleu: Option<f64>,
    pub entropy: f64,
    pub records: usize,
}

/// Decodes every example with `student` and scores the outputs. Entropy is
/// measured along the student's own outputs.
pub fn evaluate_student(student: &dyn Scorer, examples: &[DistillExample], config: &DecodeConfig) -> Result<(Option<f64>, f64)> {
    let outputs = examples
        .par_iter()
        .map(|e| beam_search(student, &e.src, config).map(|r| r.output.tokens))
        .collect::<Result<Vec<_>>>()?;
    let forced: Vec<(&[TokenId], &[TokenId])> = examples
        .iter()
        .zip(&outputs)
        .map(|(e, o)| (e.src.as_slice(), o.as_slice()))
        .collect();
    let entropy = dataset_entropy(student, &forced);
    let bleu = match examples.iter().map(|e| e.reference.as_ref()).collect::<Option<Vec<_>>>() {
        Some(refs) if !refs.is_empty() => {
            let pairs: Vec<(&[TokenId], &[TokenId])> =
                outputs.iter().zip(refs).map(|(o, r)| (o.as_slice(), r.as_slice())).collect();
            Some(100.0 * Bleu::for_vocab(student.vocab()).corpus(&pairs)?.score)
        }
        _ => None,
    };
    Ok((bleu, entropy))
}

/// Trains one student per mode and reports BLEU and entropy for each.
pub fn compare_distillation(
    teacher: &TeacherSetup<'_>,
    examples: &[DistillExample],
    student: StudentConfig,
) -> Result<Vec<ReportRow>> {
    let inputs: Vec<Vec<TokenId>> = examples.iter().map(|e| e.src.clone()).collect();
    DistillMode::ALL
        .iter()
        .map(|&mode| {
            let labels = teacher.pseudo_labels(mode, &inputs)?;
            let model = train_student(teacher.registry.vocab().clone(), &labels, student)?;
            let (bleu, entropy) = evaluate_student(&model, examples, &teacher.config)?;
            Ok(ReportRow {
                variant: mode.name().into(),
                bleu,
                entropy,
                records: labels.len(),
            })
        })
        .collect()
}
