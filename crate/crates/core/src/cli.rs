//! Command-line interface.
//!
//! Exit status: 0 on success, 1 for invalid flags or settings, 2 for bad
//! input data.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam_search::beam_search;
use crate::config::{DecodeConfig, DecodeResult};
use crate::distill::{
    compare_distillation, evaluate_student, train_student, DistillExample, DistillMode, ReportRow, StudentConfig,
    TeacherSetup,
};
use crate::ebbs::{ebbs_decode, EbbsOptions, FinalScore, VotingScheme};
use crate::error::{Error, ErrorKind, Result};
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::mbr::mbr_select;
use crate::metrics::{dataset_entropy, Bleu};
use crate::paths::{available_paths, make_component_scorers, translate, ModelRegistry, TranslationPath, DEFAULT_PIVOT_ORDER};
use crate::scorer::{load_scorer, AveragingScorer, SharedScorer, VotingScorer};
use crate::synth;
use crate::vocab::{TokenId, TokenRef, Vocabulary};

#[derive(Debug, Parser)]
#[command(name = "ebbs", version, about = "Ensemble decoding with bi-level beam search")]
struct Cli {
    /// Seed for synthetic fixture generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print wall-clock time per stage to standard error.
    #[arg(long, global = true)]
    timing: bool,
    /// `a` in max_len = ceil(a * |x|) + b.
    #[arg(long = "max-len-a", global = true, default_value_t = 2.0)]
    max_len_a: f64,
    /// `b` in max_len = ceil(a * |x|) + b.
    #[arg(long = "max-len-b", global = true, default_value_t = 8)]
    max_len_b: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Beam search along one translation path.
    Decode(DecodeArgs),
    /// Ensemble decoding with bi-level beam search.
    Ebbs(EbbsArgs),
    /// Baseline ensembles: word-level averaging or voting, or sequence-level MBR.
    Ensemble(EnsembleArgs),
    /// Pick one candidate per line by minimum Bayes risk.
    Mbr(MbrArgs),
    /// Corpus BLEU of hypotheses against references.
    Eval(EvalArgs),
    /// Train an n-gram student on teacher outputs.
    Distill(DistillArgs),
    /// Mean prediction entropy of a scorer along given outputs.
    Entropy(EntropyArgs),
    /// Write a synthetic registry and input file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TaskArgs {
    /// Registry manifest (JSON).
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    src: String,
    #[arg(long)]
    tgt: String,
    /// Input JSONL with a "src" token list per line.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// `direct` or `pivot:<lang>`.
    #[arg(long, default_value = "direct")]
    path: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, value_enum, default_value_t = Normalize::Tally)]
    length_normalize: Normalize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Normalize {
    Tally,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Voting {
    TopzSum,
    TotalSum,
    Max,
    ZeroOne,
}

impl From<Voting> for VotingScheme {
    fn from(v: Voting) -> Self {
        match v {
            Voting::TopzSum => VotingScheme::TopZSum,
            Voting::TotalSum => VotingScheme::TotalSum,
            Voting::Max => VotingScheme::Max,
            Voting::ZeroOne => VotingScheme::ZeroOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Final {
    Tally,
    ComponentMean,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Comma-separated `direct` / `pivot:<lang>` list, or `auto` for the
    /// direct path plus every registered pivot in --pivot-order.
    #[arg(long, default_value = "auto")]
    paths: String,
    /// Pivot preference used by `--paths auto`.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PIVOT_ORDER.map(String::from))]
    pivot_order: Vec<String>,
}

impl PathArgs {
    fn resolve(&self, registry: &ModelRegistry, src: &str, tgt: &str) -> Result<Vec<TranslationPath>> {
        if self.paths.trim() == "auto" {
            let order: Vec<&str> = self.pivot_order.iter().map(String::as_str).collect();
            let paths = available_paths(registry, src, tgt, &order);
            if paths.is_empty() {
                return Err(Error::Path(format!("no registered path from {src} to {tgt}")));
            }
            Ok(paths)
        } else {
            TranslationPath::parse_list(&self.paths, src, tgt)
        }
    }
}

#[derive(Debug, Args)]
struct EbbsArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[arg(long, default_value_t = 5)]
    lower_beam: usize,
    #[arg(long, default_value_t = 5)]
    upper_beam: usize,
    #[arg(long, value_enum, default_value_t = Voting::TopzSum)]
    voting: Voting,
    #[arg(long, value_enum, default_value_t = Normalize::Tally)]
    length_normalize: Normalize,
    /// Score used to pick the output among finished hypotheses.
    #[arg(long, value_enum, default_value_t = Final::Tally)]
    final_score: Final,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Average,
    Vote,
    Mbr,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, value_enum, default_value_t = Normalize::Tally)]
    length_normalize: Normalize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct MbrArgs {
    /// JSONL: a list of candidate token lists per line, or {"candidates": [...]}.
    #[arg(long)]
    candidates: PathBuf,
    /// Vocabulary naming the markers to ignore; defaults to <s> and </s>.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSONL with a "hyp" token list per line (and "ref" when --refs is absent).
    #[arg(long)]
    hyps: PathBuf,
    /// JSONL with a "ref" (or "tgt") token list per line.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Write per-sentence BLEU as JSONL here.
    #[arg(long)]
    per_sentence: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistillArgs {
    /// `compare` trains all three variants and reports each.
    #[arg(value_parser = ["compare"])]
    action: Option<String>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[arg(long, default_value = "ebbs")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Teacher beam size, used at both levels.
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, value_enum, default_value_t = Voting::TopzSum)]
    voting: Voting,
    /// Student model artifact (JSON).
    #[arg(long)]
    student: Option<PathBuf>,
    /// Pseudo-labels (JSONL).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Report (JSON); also printed to standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    /// Table spec or n-gram model artifact.
    #[arg(long)]
    scorer: PathBuf,
    /// JSONL with "src" and "tgt" (or "hyp") token lists.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fixture {
    /// Three directions, for distillation.
    Distill,
    /// Direct and two pivot paths, each corrupting different positions.
    Noisy,
    /// Three teachers that disagree at one position.
    Disagreement,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Fixture,
    #[arg(long, default_value_t = 30)]
    sentences: usize,
    /// Output directory for registry.json and inputs.jsonl.
    #[arg(long)]
    out: PathBuf,
}

/// A line of an input file.
#[derive(Debug, Deserialize)]
struct InputLine {
    src: Vec<TokenRef>,
    #[serde(default, alias = "ref")]
    reference: Option<Vec<TokenRef>>,
}

/// A line of decode output.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OutputLine {
    pub src: Vec<String>,
    pub hyp: Vec<String>,
    /// Selection score (length-normalized when enabled).
    pub score: f64,
    /// Accumulated log score (tally for ensembles).
    pub log_score: f64,
    pub steps: usize,
    pub forced_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<Vec<String>>,
}

impl OutputLine {
    pub fn new(vocab: &Vocabulary, src: &[TokenId], r: &DecodeResult) -> Self {
        Self {
            src: vocab.render(src),
            hyp: vocab.render(&r.output.tokens),
            score: r.output_score,
            log_score: r.output.log_score,
            steps: r.steps_taken,
            forced_stop: r.forced_stop,
            intermediate: r.intermediate.as_ref().map(|i| vocab.render(i)),
        }
    }
}

struct Env<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    timing: bool,
    max_len_a: f64,
    max_len_b: usize,
    seed: u64,
}

impl Env<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f();
        if self.timing {
            let _ = writeln!(self.err, "timing {name}: {:.3} ms", start.elapsed().as_secs_f64() * 1e3);
        }
        r
    }

    fn config(&self, lower: usize, upper: usize, normalize: Normalize) -> DecodeConfig {
        DecodeConfig {
            lower_beam: lower,
            upper_beam: upper,
            max_len_factor: self.max_len_a,
            max_len_offset: self.max_len_b,
            length_normalize: normalize == Normalize::Tally,
        }
    }

    fn print(&mut self, line: impl std::fmt::Display) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let mut env = Env {
        out,
        err,
        timing: cli.timing,
        max_len_a: cli.max_len_a,
        max_len_b: cli.max_len_b,
        seed: cli.seed,
    };
    match dispatch(cli.command, &mut env) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(env.err, "error: {e}");
            match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
            }
        }
    }
}

fn dispatch(command: Command, env: &mut Env<'_>) -> Result<()> {
    if !env.max_len_a.is_finite() || env.max_len_a < 0.0 {
        return Err(Error::config("--max-len-a must be a non-negative number"));
    }
    match command {
        Command::Decode(a) => cmd_decode(a, env),
        Command::Ebbs(a) => cmd_ebbs(a, env),
        Command::Ensemble(a) => cmd_ensemble(a, env),
        Command::Mbr(a) => cmd_mbr(a, env),
        Command::Eval(a) => cmd_eval(a, env),
        Command::Distill(a) => cmd_distill(a, env),
        Command::Entropy(a) => cmd_entropy(a, env),
        Command::Synth(a) => cmd_synth(a, env),
    }
}

struct Loaded {
    registry: ModelRegistry,
    inputs: Vec<Vec<TokenId>>,
    references: Vec<Option<Vec<TokenId>>>,
}

fn load_task(task: &TaskArgs, env: &mut Env<'_>) -> Result<Loaded> {
    env.stage("load", || {
        let registry = ModelRegistry::load(&task.registry)?;
        let lines: Vec<InputLine> = read_jsonl(&task.input)?;
        let vocab = registry.vocab().clone();
        let mut inputs = Vec::with_capacity(lines.len());
        let mut references = Vec::with_capacity(lines.len());
        for (i, l) in lines.iter().enumerate() {
            let at = |e: Error| Error::data(format!("{}:{}: {e}", task.input.display(), i + 1));
            inputs.push(vocab.resolve_seq(&l.src).map_err(at)?);
            references.push(match &l.reference {
                Some(r) => Some(frame(&vocab, vocab.resolve_seq(r).map_err(at)?)),
                None => None,
            });
        }
        Ok(Loaded {
            registry,
            inputs,
            references,
        })
    })
}

/// Adds missing `<s>` / `</s>` around a reference.
fn frame(vocab: &Vocabulary, mut seq: Vec<TokenId>) -> Vec<TokenId> {
    if seq.first() != Some(&vocab.bos()) {
        seq.insert(0, vocab.bos());
    }
    if seq.last() != Some(&vocab.eos()) || seq.len() == 1 {
        seq.push(vocab.eos());
    }
    seq
}

/// Decodes every input in parallel; results keep input order.
fn decode_all<F>(inputs: &[Vec<TokenId>], decode: F) -> Result<Vec<DecodeResult>>
where
    F: Fn(&[TokenId]) -> Result<DecodeResult> + Sync,
{
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| decode(x).map_err(|e| annotate(e, i)))
        .collect()
}

fn annotate(e: Error, line: usize) -> Error {
    match e.kind() {
        ErrorKind::Config => e,
        ErrorKind::Data => Error::data(format!("input line {}: {e}", line + 1)),
    }
}

fn write_outputs(path: &Path, vocab: &Vocabulary, inputs: &[Vec<TokenId>], results: &[DecodeResult], env: &mut Env<'_>) -> Result<()> {
    let lines: Vec<OutputLine> = inputs.iter().zip(results).map(|(x, r)| OutputLine::new(vocab, x, r)).collect();
    env.stage("write", || write_jsonl(path, &lines))
}

fn cmd_decode(a: DecodeArgs, env: &mut Env<'_>) -> Result<()> {
    let config = env.config(a.beam, a.beam, a.length_normalize);
    config.validate()?;
    let path = TranslationPath::parse(&a.path, &a.task.src, &a.task.tgt)?;
    let t = load_task(&a.task, env)?;
    let results = env.stage("decode", || decode_all(&t.inputs, |x| translate(&t.registry, &path, x, &config)))?;
    write_outputs(&a.output, t.registry.vocab(), &t.inputs, &results, env)
}

fn cmd_ebbs(a: EbbsArgs, env: &mut Env<'_>) -> Result<()> {
    let config = env.config(a.lower_beam, a.upper_beam, a.length_normalize);
    for w in config.validate()? {
        let _ = writeln!(env.err, "warning: {w}");
    }
    let options = EbbsOptions {
        scheme: a.voting.into(),
        final_score: match a.final_score {
            Final::Tally => FinalScore::Tally,
            Final::ComponentMean => FinalScore::ComponentMean,
        },
    };
    let t = load_task(&a.task, env)?;
    let paths = a.paths.resolve(&t.registry, &a.task.src, &a.task.tgt)?;
    let results = env.stage("decode", || {
        decode_all(&t.inputs, |x| {
            let components = make_component_scorers(&t.registry, &paths, x, &config)?;
            ebbs_decode(&components, x, &config, options)
        })
    })?;
    write_outputs(&a.output, t.registry.vocab(), &t.inputs, &results, env)
}

fn cmd_ensemble(a: EnsembleArgs, env: &mut Env<'_>) -> Result<()> {
    let config = env.config(a.beam, a.beam, a.length_normalize);
    config.validate()?;
    let t = load_task(&a.task, env)?;
    let paths = a.paths.resolve(&t.registry, &a.task.src, &a.task.tgt)?;
    let bleu = Bleu::for_vocab(t.registry.vocab());
    let results = env.stage("decode", || {
        decode_all(&t.inputs, |x| match a.method {
            Method::Average | Method::Vote => {
                let components = make_component_scorers(&t.registry, &paths, x, &config)?;
                let scorer: SharedScorer = if a.method == Method::Average {
                    Arc::new(AveragingScorer::new(components)?)
                } else {
                    Arc::new(VotingScorer::new(components)?)
                };
                beam_search(scorer.as_ref(), x, &config)
            }
            Method::Mbr => {
                let mut outputs = paths
                    .iter()
                    .map(|p| translate(&t.registry, p, x, &config))
                    .collect::<Result<Vec<_>>>()?;
                let candidates: Vec<Vec<TokenId>> = outputs.iter().map(|r| r.output.tokens.clone()).collect();
                let pick = mbr_select(&bleu, &candidates)?;
                Ok(outputs.swap_remove(pick.index))
            }
        })
    })?;
    write_outputs(&a.output, t.registry.vocab(), &t.inputs, &results, env)
}

/// Maps token strings to ids for files that come without a vocabulary.
struct Interner {
    vocab: Option<Vocabulary>,
    ids: HashMap<String, TokenId>,
    names: Vec<String>,
}

impl Interner {
    fn new(vocab_path: Option<&Path>) -> Result<Self> {
        let vocab = vocab_path.map(Vocabulary::load).transpose()?;
        let mut me = Self {
            vocab,
            ids: HashMap::new(),
            names: Vec::new(),
        };
        if me.vocab.is_none() {
            me.intern("<s>");
            me.intern("</s>");
        }
        Ok(me)
    }

    fn intern(&mut self, s: &str) -> TokenId {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as TokenId;
        self.ids.insert(s.to_string(), id);
        self.names.push(s.to_string());
        id
    }

    fn ids(&mut self, seq: &[TokenRef]) -> Result<Vec<TokenId>> {
        match &self.vocab {
            Some(v) => v.resolve_seq(seq),
            None => Ok(seq
                .iter()
                .map(|t| match t {
                    TokenRef::Text(s) => self.intern(s),
                    TokenRef::Id(i) => self.intern(&i.to_string()),
                })
                .collect()),
        }
    }

    fn bleu(&self) -> Bleu {
        match &self.vocab {
            Some(v) => Bleu::for_vocab(v),
            None => Bleu::new([0, 1]),
        }
    }

    fn render(&self, ids: &[TokenId]) -> Vec<String> {
        match &self.vocab {
            Some(v) => v.render(ids),
            None => ids.iter().map(|&i| self.names[i as usize].clone()).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CandidateLine {
    List(Vec<Vec<TokenRef>>),
    Object { candidates: Vec<Vec<TokenRef>> },
}

fn cmd_mbr(a: MbrArgs, env: &mut Env<'_>) -> Result<()> {
    let mut interner = Interner::new(a.vocab.as_deref())?;
    let lines: Vec<CandidateLine> = env.stage("load", || read_jsonl(&a.candidates))?;
    let sets = lines
        .iter()
        .map(|l| {
            let c = match l {
                CandidateLine::List(c) | CandidateLine::Object { candidates: c } => c,
            };
            c.iter().map(|s| interner.ids(s)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let bleu = interner.bleu();
    let picks = env.stage("select", || {
        sets.iter()
            .enumerate()
            .map(|(i, c)| mbr_select(&bleu, c).map_err(|e| annotate(e, i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let out: Vec<serde_json::Value> = picks
        .iter()
        .zip(&sets)
        .map(|(p, c)| serde_json::json!({"index": p.index, "utility": p.utility, "hyp": interner.render(&c[p.index])}))
        .collect();
    env.stage("write", || write_jsonl(&a.output, &out))
}

#[derive(Debug, Deserialize)]
struct EvalLine {
    #[serde(default)]
    hyp: Option<Vec<TokenRef>>,
    #[serde(default, alias = "tgt")]
    r#ref: Option<Vec<TokenRef>>,
}

fn cmd_eval(a: EvalArgs, env: &mut Env<'_>) -> Result<()> {
    let mut interner = Interner::new(a.vocab.as_deref())?;
    let hyp_lines: Vec<EvalLine> = read_jsonl(&a.hyps)?;
    let ref_lines: Vec<EvalLine> = match &a.refs {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    if a.refs.is_some() && ref_lines.len() != hyp_lines.len() {
        return Err(Error::data(format!(
            "{} hypotheses but {} references",
            hyp_lines.len(),
            ref_lines.len()
        )));
    }
    let mut pairs = Vec::with_capacity(hyp_lines.len());
    for (i, h) in hyp_lines.iter().enumerate() {
        let missing = |what: &str| Error::data(format!("line {}: missing \"{what}\"", i + 1));
        let hyp = h.hyp.as_ref().ok_or_else(|| missing("hyp"))?;
        let reference = match a.refs {
            Some(_) => ref_lines[i].r#ref.as_ref(),
            None => h.r#ref.as_ref(),
        }
        .ok_or_else(|| missing("ref"))?;
        pairs.push((interner.ids(hyp)?, interner.ids(reference)?));
    }
    let bleu = interner.bleu();
    let corpus = bleu.corpus(&pairs)?;
    if let Some(p) = &a.per_sentence {
        let lines = pairs
            .iter()
            .enumerate()
            .map(|(i, (h, r))| Ok(serde_json::json!({"index": i, "bleu": 100.0 * bleu.sentence(h, r)?.score})))
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(p, &lines)?;
    }
    env.print(format_args!("{:.2}", 100.0 * corpus.score))
}

fn cmd_distill(a: DistillArgs, env: &mut Env<'_>) -> Result<()> {
    let config = env.config(a.beam, a.beam, Normalize::Tally);
    config.validate()?;
    let student = StudentConfig {
        order: a.order,
        alpha: a.alpha,
    };
    if student.order < 1 || !(student.alpha > 0.0 && student.alpha.is_finite()) {
        return Err(Error::config("--order must be at least 1 and --alpha positive"));
    }
    let mode: DistillMode = a.mode.parse()?;
    let t = load_task(&a.task, env)?;
    let paths = a.paths.resolve(&t.registry, &a.task.src, &a.task.tgt)?;
    let teacher = TeacherSetup {
        registry: &t.registry,
        paths: &paths,
        config: config.clone(),
        options: EbbsOptions {
            scheme: a.voting.into(),
            ..EbbsOptions::default()
        },
    };
    let examples: Vec<DistillExample> = t
        .inputs
        .iter()
        .zip(&t.references)
        .map(|(x, r)| DistillExample {
            src: x.clone(),
            reference: r.clone(),
        })
        .collect();

    let rows: Vec<ReportRow> = if a.action.is_some() {
        env.stage("compare", || compare_distillation(&teacher, &examples, student))?
    } else {
        let labels = env.stage("teacher", || teacher.pseudo_labels(mode, &t.inputs))?;
        if labels.failures > 0 {
            let _ = writeln!(env.err, "warning: {} inputs failed to decode and were skipped", labels.failures);
        }
        let model = env.stage("train", || train_student(t.registry.vocab().clone(), &labels, student))?;
        if let Some(p) = &a.labels {
            write_jsonl(p, &labels.to_file_repr(t.registry.vocab()))?;
        }
        if let Some(p) = &a.student {
            write_json(p, &model.to_file_repr())?;
        }
        let (bleu, entropy) = env.stage("evaluate", || evaluate_student(&model, &examples, &config))?;
        vec![ReportRow {
            variant: mode.name().into(),
            bleu,
            entropy,
            records: labels.len(),
        }]
    };
    if let Some(p) = &a.report {
        write_json(p, &rows)?;
    }
    let text = serde_json::to_string(&rows).map_err(|e| Error::data(e.to_string()))?;
    env.print(text)
}

#[derive(Debug, Deserialize)]
struct EntropyLine {
    src: Vec<TokenRef>,
    #[serde(alias = "hyp")]
    tgt: Vec<TokenRef>,
}

fn cmd_entropy(a: EntropyArgs, env: &mut Env<'_>) -> Result<()> {
    let scorer = env.stage("load", || load_scorer(&a.scorer))?;
    let vocab = scorer.vocab();
    let lines: Vec<EntropyLine> = read_jsonl(&a.dataset)?;
    let data = lines
        .iter()
        .map(|l| Ok((vocab.resolve_seq(&l.src)?, frame(vocab, vocab.resolve_seq(&l.tgt)?))))
        .collect::<Result<Vec<_>>>()?;
    if data.is_empty() {
        return Err(Error::data("entropy dataset is empty"));
    }
    let h = env.stage("entropy", || Ok(dataset_entropy(scorer.as_ref(), &data)))?;
    env.print(format_args!("{h:.6}"))
}

fn cmd_synth(a: SynthArgs, env: &mut Env<'_>) -> Result<()> {
    if a.sentences == 0 {
        return Err(Error::config("--sentences must be positive"));
    }
    let task = match a.kind {
        Fixture::Distill => synth::distillation_task(env.seed, a.sentences),
        Fixture::Noisy => synth::noisy_pivot_task(env.seed, a.sentences),
        Fixture::Disagreement => synth::disagreement_task(),
    };
    task.write_to(&a.out)?;
    env.print(format_args!("{} --src {} --tgt {} --paths {}", a.out.display(), task.src, task.tgt, task.path_spec()))
}
