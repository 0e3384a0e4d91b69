//! Standard single-scorer beam search and an exhaustive decoder used as its
//! correctness oracle.

use std::cmp::Ordering;

use crate::config::{DecodeConfig, DecodeResult, StepStats};
use crate::error::{Error, Result};
use crate::hypothesis::{normalized_score, Beam, Hypothesis};
use crate::logmath::is_log_zero;
use crate::scorer::Scorer;
use crate::vocab::TokenId;

/// Largest vocabulary and length the exhaustive decoder accepts.
pub const BRUTE_FORCE_MAX_VOCAB: usize = 8;
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

/// One-token expansions of `h`. On the final (forced) step only the end
/// marker is proposed, whatever its probability; otherwise zero-probability
/// tokens and `<s>` are skipped.
pub(crate) fn expansions<'a>(
    h: &'a Hypothesis,
    dist: &'a [f64],
    scorer: &'a dyn Scorer,
    forced: bool,
) -> impl Iterator<Item = Hypothesis> + 'a {
    let vocab = scorer.vocab();
    let eos = vocab.eos();
    vocab.generable().filter_map(move |y| {
        let lp = dist[y as usize];
        if forced {
            (y == eos).then(|| h.extend(y, h.log_score + lp, eos))
        } else if is_log_zero(lp) {
            None
        } else {
            Some(h.extend(y, h.log_score + lp, eos))
        }
    })
}

/// Orders finished hypotheses for final selection: best score first, ties
/// on ascending token sequence.
pub(crate) fn selection_order(a: &(f64, &Hypothesis), b: &(f64, &Hypothesis)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.tokens.cmp(&b.1.tokens))
}

/// Highest-scoring finished hypothesis and its selection score.
pub(crate) fn select_output(finished: &[Hypothesis], length_normalize: bool) -> Result<(Hypothesis, f64)> {
    let mut scored = finished
        .iter()
        .map(|h| Ok((normalized_score(h, length_normalize)?, h)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(selection_order);
    scored
        .first()
        .map(|(s, h)| ((*h).clone(), *s))
        .ok_or_else(|| Error::Decode("search finished without any complete hypothesis".into()))
}

/// Beam search with beam size `config.lower_beam`.
///
/// Each step expands every open hypothesis over the vocabulary, keeps the
/// best `Z` expansions, and moves those ending in `</s>` to the finished
/// set. Search stops once `Z` hypotheses have finished, when no open
/// hypothesis remains, or at the length limit, where open hypotheses are
/// closed with `</s>` at its model probability.
pub fn beam_search(scorer: &dyn Scorer, input: &[TokenId], config: &DecodeConfig) -> Result<DecodeResult> {
    let warnings = config.validate()?;
    if input.is_empty() {
        return Err(Error::data("input sequence is empty"));
    }
    let vocab = scorer.vocab();
    let z = config.lower_beam;
    let max_len = config.max_len(input.len());

    let mut beam = vec![Hypothesis::start(vocab.bos())];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut steps = Vec::new();
    let mut forced_stop = false;

    for t in 1..=max_len {
        let forced = t == max_len;
        let mut candidates = Vec::new();
        for h in &beam {
            let dist = scorer.next_log_distribution(input, &h.tokens);
            candidates.extend(expansions(h, &dist, scorer, forced));
        }
        let n_candidates = candidates.len();

        let mut next = Vec::with_capacity(z);
        let mut n_finished = 0;
        for h in Beam::top_k(candidates, z).into_entries() {
            if h.finished {
                if finished.len() < z {
                    finished.push(h);
                    n_finished += 1;
                }
            } else {
                next.push(h);
            }
        }
        steps.push(StepStats {
            step: t,
            candidates: n_candidates,
            finished: n_finished,
            active: next.len(),
        });
        forced_stop = forced;
        beam = next;
        if finished.len() >= z || beam.is_empty() {
            break;
        }
    }

    let (output, output_score) = select_output(&finished, config.length_normalize)?;
    Ok(DecodeResult {
        output,
        output_score,
        finished,
        steps_taken: steps.len(),
        forced_stop,
        steps,
        warnings,
        intermediate: None,
    })
}

/// Scores every `</s>`-terminated sequence of at most `max_len` generated
/// tokens and returns the best one under [`normalized_score`].
///
/// Uses the same pruning and forced-final-step rules as [`beam_search`], so
/// with a beam wide enough to hold every leaf the two agree exactly. Only
/// the selected hypothesis is kept in `finished`.
pub fn brute_force_decode(
    scorer: &dyn Scorer,
    input: &[TokenId],
    max_len: usize,
    length_normalize: bool,
) -> Result<DecodeResult> {
    let v = scorer.vocab().len();
    if v > BRUTE_FORCE_MAX_VOCAB || max_len > BRUTE_FORCE_MAX_LEN || max_len == 0 {
        let branching = (v - 1) as f64;
        let estimate = (1..=max_len.max(1)).map(|n| branching.powi(n as i32)).sum();
        return Err(Error::SearchSpace {
            vocab: v,
            max_len,
            estimate,
        });
    }

    struct Search<'a> {
        scorer: &'a dyn Scorer,
        input: &'a [TokenId],
        max_len: usize,
        length_normalize: bool,
        best: Option<(f64, Hypothesis)>,
    }

    impl Search<'_> {
        fn visit(&mut self, h: &Hypothesis) -> Result<()> {
            let t = h.generated_len() + 1;
            let forced = t == self.max_len;
            let dist = self.scorer.next_log_distribution(self.input, &h.tokens);
            let children: Vec<Hypothesis> = expansions(h, &dist, self.scorer, forced).collect();
            for child in children {
                if child.finished {
                    let score = normalized_score(&child, self.length_normalize)?;
                    let better = match &self.best {
                        None => true,
                        Some((s, b)) => selection_order(&(score, &child), &(*s, b)) == Ordering::Less,
                    };
                    if better {
                        self.best = Some((score, child));
                    }
                } else {
                    self.visit(&child)?;
                }
            }
            Ok(())
        }
    }

    let mut search = Search {
        scorer,
        input,
        max_len,
        length_normalize,
        best: None,
    };
    search.visit(&Hypothesis::start(scorer.vocab().bos()))?;
    let (output_score, output) = search
        .best
        .ok_or_else(|| Error::Decode("no complete sequence within the length limit".into()))?;
    Ok(DecodeResult {
        finished: vec![output.clone()],
        output,
        output_score,
        steps_taken: max_len,
        forced_stop: false,
        steps: Vec::new(),
        warnings: Vec::new(),
        intermediate: None,
    })
}
