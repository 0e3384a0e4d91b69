//! Ensemble with bi-level beam search (EBBS).
//!
//! Every step, each component extends the shared upper-level beam on its own
//! and keeps its best `Z_lower` expansions (the lower-level beams). The union
//! of those candidates is then scored by a vote across components and the
//! best `Z_upper` become the next shared beam. Scores carried by the shared
//! beam are vote tallies, so later expansions compound the tallies of
//! earlier steps.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam_search::{expansions, selection_order};
use crate::config::{DecodeConfig, DecodeResult, StepStats};
use crate::error::{Error, Result};
use crate::hypothesis::{normalized_score, Beam, Hypothesis};
use crate::logmath::log_sum_exp;
use crate::scorer::{shared_vocab, Scorer, SharedScorer};
use crate::vocab::TokenId;

/// How lower-level candidates are merged into the shared beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VotingScheme {
    /// Sum of the probabilities a candidate holds in the lower beams that
    /// contain it.
    #[default]
    TopZSum,
    /// Sum over every component, including those whose lower beam missed
    /// the candidate.
    TotalSum,
    /// Largest probability across the lower beams that contain it.
    Max,
    /// Number of lower beams containing it; ties fall back to `TopZSum`.
    ZeroOne,
}

impl VotingScheme {
    pub const ALL: [VotingScheme; 4] = [
        VotingScheme::TopZSum,
        VotingScheme::TotalSum,
        VotingScheme::Max,
        VotingScheme::ZeroOne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VotingScheme::TopZSum => "topz-sum",
            VotingScheme::TotalSum => "total-sum",
            VotingScheme::Max => "max",
            VotingScheme::ZeroOne => "zero-one",
        }
    }
}

impl fmt::Display for VotingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VotingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown voting scheme {s:?} (expected topz-sum, total-sum, max or zero-one)")))
    }
}

/// Which score picks the final output among finished hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalScore {
    /// The vote tally carried by the shared beam.
    #[default]
    Tally,
    /// `ln((1/K) Σ_k p_k(y|x))`, each component's joint probability of the
    /// whole sequence.
    ComponentMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EbbsOptions {
    pub scheme: VotingScheme,
    pub final_score: FinalScore,
}

/// A merged candidate and the votes it received.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTally {
    pub candidate: Vec<TokenId>,
    /// Log of the scheme's tally. For `ZeroOne` this is the `TopZSum`
    /// tally, used to break vote-count ties and carried forward as the score.
    pub tally_log: f64,
    /// Components whose lower beam contains the candidate.
    pub supporters: BTreeSet<usize>,
    pub vote_count: usize,
}

impl VoteTally {
    fn rank(&self, other: &Self, scheme: VotingScheme) -> std::cmp::Ordering {
        let by_count = match scheme {
            VotingScheme::ZeroOne => other.vote_count.cmp(&self.vote_count),
            _ => std::cmp::Ordering::Equal,
        };
        by_count
            .then_with(|| other.tally_log.total_cmp(&self.tally_log))
            .then_with(|| self.candidate.cmp(&other.candidate))
    }
}

fn expand_step(upper: &Beam, scorer: &dyn Scorer, input: &[TokenId], z_lower: usize, forced: bool) -> Beam {
    let mut candidates = Vec::new();
    for h in upper {
        let dist = scorer.next_log_distribution(input, &h.tokens);
        candidates.extend(expansions(h, &dist, scorer, forced));
    }
    Beam::top_k(candidates, z_lower)
}

/// Lower-level beam of one component: the best `z_lower` one-token
/// extensions of the shared beam, scored `tally(prefix) · p_k(y | prefix, x)`.
pub fn expand_lower(upper: &Beam, scorer: &dyn Scorer, input: &[TokenId], z_lower: usize) -> Beam {
    expand_step(upper, scorer, input, z_lower, false)
}

/// Merges the lower-level beams into tallies for every candidate in their
/// union, ranked under `scheme`.
pub fn tally_votes(
    lower_beams: &[Beam],
    scheme: VotingScheme,
    components: &[SharedScorer],
    input: &[TokenId],
    prev_upper: &Beam,
) -> Result<Vec<VoteTally>> {
    if lower_beams.is_empty() || lower_beams.len() != components.len() {
        return Err(Error::config(format!(
            "need one lower beam per component, got {} beams for {} components",
            lower_beams.len(),
            components.len()
        )));
    }

    // candidate -> (supporting component, joint log-probability in its beam)
    let mut votes: HashMap<&[TokenId], Vec<(usize, f64)>> = HashMap::new();
    for (k, beam) in lower_beams.iter().enumerate() {
        for h in beam {
            votes.entry(h.tokens.as_slice()).or_default().push((k, h.log_score));
        }
    }
    if votes.is_empty() {
        return Err(Error::Decode("all components exhausted: no candidates to vote on".into()));
    }

    let total_sum = if scheme == VotingScheme::TotalSum {
        Some(TotalSumContext::new(components, input, prev_upper))
    } else {
        None
    };

    let mut tallies: Vec<VoteTally> = votes
        .into_iter()
        .map(|(candidate, support)| {
            let scores: Vec<f64> = support.iter().map(|&(_, s)| s).collect();
            let tally_log = match scheme {
                VotingScheme::TopZSum | VotingScheme::ZeroOne => log_sum_exp(&scores),
                VotingScheme::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                VotingScheme::TotalSum => total_sum.as_ref().expect("built above").tally(candidate)?,
            };
            Ok(VoteTally {
                candidate: candidate.to_vec(),
                tally_log,
                supporters: support.iter().map(|&(k, _)| k).collect(),
                vote_count: support.len(),
            })
        })
        .collect::<Result<_>>()?;
    tallies.sort_by(|a, b| a.rank(b, scheme));
    Ok(tallies)
}

/// Recomputes every component's step probability for candidates that fell
/// outside its own lower beam.
struct TotalSumContext<'a> {
    components: &'a [SharedScorer],
    input: &'a [TokenId],
    prev: HashMap<&'a [TokenId], f64>,
}

impl<'a> TotalSumContext<'a> {
    fn new(components: &'a [SharedScorer], input: &'a [TokenId], prev_upper: &'a Beam) -> Self {
        let prev = prev_upper.iter().map(|h| (h.tokens.as_slice(), h.log_score)).collect();
        Self { components, input, prev }
    }

    fn tally(&self, candidate: &[TokenId]) -> Result<f64> {
        let (last, prefix) = candidate
            .split_last()
            .ok_or_else(|| Error::Decode("empty candidate".into()))?;
        let prev = *self
            .prev
            .get(prefix)
            .ok_or_else(|| Error::Decode("candidate does not extend the previous shared beam".into()))?;
        let joints: Vec<f64> = self
            .components
            .iter()
            .map(|c| prev + c.next_log_distribution(self.input, prefix)[*last as usize])
            .collect();
        Ok(log_sum_exp(&joints))
    }
}

/// Upper-level synchronization: the best `z_upper` candidates of the union
/// of lower beams under `scheme`, each scored by its tally.
pub fn synchronize(
    lower_beams: &[Beam],
    scheme: VotingScheme,
    components: &[SharedScorer],
    input: &[TokenId],
    prev_upper: &Beam,
    z_upper: usize,
) -> Result<Beam> {
    let tallies = tally_votes(lower_beams, scheme, components, input, prev_upper)?;
    Ok(upper_beam_from(tallies, components, z_upper))
}

fn upper_beam_from(tallies: Vec<VoteTally>, components: &[SharedScorer], z_upper: usize) -> Beam {
    let eos = components[0].vocab().eos();
    let entries = tallies
        .into_iter()
        .take(z_upper)
        .map(|t| Hypothesis {
            finished: t.candidate.last() == Some(&eos),
            tokens: t.candidate,
            log_score: t.tally_log,
        })
        .collect();
    Beam::from_ranked(entries, z_upper)
}

/// `ln((1/K) Σ_k p_k(y|x))` for a complete sequence.
pub fn component_mean_log_prob(components: &[SharedScorer], input: &[TokenId], tokens: &[TokenId]) -> f64 {
    let joints: Vec<f64> = components
        .iter()
        .map(|c| {
            (1..tokens.len())
                .map(|t| c.next_log_distribution(input, &tokens[..t])[tokens[t] as usize])
                .sum()
        })
        .collect();
    log_sum_exp(&joints) - (components.len() as f64).ln()
}

/// Decodes `input` with the ensemble `components`.
///
/// Stops once `Z_upper` hypotheses have finished, when the shared beam runs
/// empty, or at the length limit (where every open hypothesis is closed with
/// `</s>`). Finished hypotheses leave the shared beam and are not replaced
/// within the same step.
pub fn ebbs_decode(
    components: &[SharedScorer],
    input: &[TokenId],
    config: &DecodeConfig,
    options: EbbsOptions,
) -> Result<DecodeResult> {
    let warnings = config.validate()?;
    let vocab = shared_vocab(components)?;
    if input.is_empty() {
        return Err(Error::data("input sequence is empty"));
    }
    let z_upper = config.upper_beam;
    let max_len = config.max_len(input.len());

    let mut upper = Beam::singleton(Hypothesis::start(vocab.bos()), z_upper);
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut steps = Vec::new();
    let mut forced_stop = false;

    for t in 1..=max_len {
        let forced = t == max_len;
        let lower: Vec<Beam> = components
            .par_iter()
            .map(|c| expand_step(&upper, c.as_ref(), input, config.lower_beam, forced))
            .collect();
        let tallies = tally_votes(&lower, options.scheme, components, input, &upper)?;
        let n_candidates = tallies.len();
        let synced = upper_beam_from(tallies, components, z_upper);

        let mut next = Vec::with_capacity(z_upper);
        let mut n_finished = 0;
        for h in synced.into_entries() {
            if h.finished {
                if finished.len() < z_upper {
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
        upper = Beam::from_ranked(next, z_upper);
        if finished.len() >= z_upper || upper.is_empty() {
            break;
        }
    }

    let mut scored = finished
        .iter()
        .map(|h| {
            let score = match options.final_score {
                FinalScore::Tally => normalized_score(h, config.length_normalize)?,
                FinalScore::ComponentMean => {
                    let mean = Hypothesis {
                        log_score: component_mean_log_prob(components, input, &h.tokens),
                        ..h.clone()
                    };
                    normalized_score(&mean, config.length_normalize)?
                }
            };
            Ok((score, h))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(selection_order);
    let (output_score, output) = scored
        .first()
        .map(|(s, h)| (*s, (*h).clone()))
        .ok_or_else(|| Error::Decode("search finished without any complete hypothesis".into()))?;

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

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::beam_search::beam_search;
    use crate::scorer::test_support::table;
    use crate::synth;
    use crate::vocab::Vocabulary;

    // <s>=0 </s>=1 a=2 b=3
    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::with_content(&["a", "b"]).unwrap())
    }

    fn start() -> Beam {
        Beam::singleton(Hypothesis::start(0), 2)
    }

    /// The two-component scenario; after one content token both end surely.
    fn fixture(v: &Arc<Vocabulary>) -> Vec<SharedScorer> {
        let end = [0.0, 1.0, 0.0, 0.0];
        vec![
            table(v, &[(&[0], &[0.0, 0.1, 0.6, 0.3])], Some(&end)),
            table(v, &[(&[0], &[0.0, 0.1, 0.2, 0.7])], Some(&end)),
        ]
    }

    fn config(z: usize, max_len: usize) -> DecodeConfig {
        DecodeConfig {
            lower_beam: z,
            upper_beam: z,
            max_len_factor: 0.0,
            max_len_offset: max_len,
            length_normalize: true,
        }
    }

    #[test]
    fn expand_lower_hand_example() {
        let v = vocab();
        let comps = fixture(&v);
        let b = expand_lower(&start(), comps[0].as_ref(), &[2], 2);
        let got: Vec<_> = b.iter().map(|h| (h.tokens.clone(), h.log_score)).collect();
        assert_eq!(got[0].0, vec![0, 2]);
        assert!((got[0].1 - 0.6f64.ln()).abs() < 1e-12);
        assert_eq!(got[1].0, vec![0, 3]);
        assert!((got[1].1 - 0.3f64.ln()).abs() < 1e-12);
        assert_eq!(got.len(), 2);

        let one = expand_lower(&start(), comps[0].as_ref(), &[2], 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one.entries()[0].tokens, vec![0, 2]);

        // no pruning once the beam holds every expansion
        let all = expand_lower(&start(), comps[0].as_ref(), &[2], 100);
        assert_eq!(all.len(), v.generable_len());
    }

    #[test]
    fn top_z_sum_hand_tallies() {
        let v = vocab();
        let comps = fixture(&v);
        let lower: Vec<Beam> = comps.iter().map(|c| expand_lower(&start(), c.as_ref(), &[2], 2)).collect();
        let tallies = tally_votes(&lower, VotingScheme::TopZSum, &comps, &[2], &start()).unwrap();
        assert_eq!(tallies[0].candidate, vec![0, 3]);
        assert!((tallies[0].tally_log.exp() - 1.0).abs() < 1e-9);
        assert_eq!(tallies[1].candidate, vec![0, 2]);
        assert!((tallies[1].tally_log.exp() - 0.8).abs() < 1e-9);
        assert_eq!(tallies[0].vote_count, 2);

        let upper = synchronize(&lower, VotingScheme::TopZSum, &comps, &[2], &start(), 2).unwrap();
        let order: Vec<_> = upper.iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(order, vec![vec![0, 3], vec![0, 2]]);
    }

    #[test]
    fn max_vote_hand_tallies() {
        let v = vocab();
        let comps = fixture(&v);
        let lower: Vec<Beam> = comps.iter().map(|c| expand_lower(&start(), c.as_ref(), &[2], 2)).collect();
        let tallies = tally_votes(&lower, VotingScheme::Max, &comps, &[2], &start()).unwrap();
        assert_eq!(tallies[0].candidate, vec![0, 3]);
        assert!((tallies[0].tally_log.exp() - 0.7).abs() < 1e-12);
        assert!((tallies[1].tally_log.exp() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_one_counts_votes_before_probability() {
        let v = vocab();
        // comp 0 keeps {a, </s>}, comps 1 and 2 keep {b, a}: a has 3 votes
        let comps = vec![
            table(&v, &[(&[0], &[0.0, 0.3, 0.6, 0.1])], None),
            table(&v, &[(&[0], &[0.0, 0.05, 0.15, 0.8])], None),
            table(&v, &[(&[0], &[0.0, 0.05, 0.15, 0.8])], None),
        ];
        let lower: Vec<Beam> = comps.iter().map(|c| expand_lower(&start(), c.as_ref(), &[2], 2)).collect();
        let zo = tally_votes(&lower, VotingScheme::ZeroOne, &comps, &[2], &start()).unwrap();
        assert_eq!(zo[0].candidate, vec![0, 2]);
        assert_eq!(zo[0].vote_count, 3);
        let sum = tally_votes(&lower, VotingScheme::TopZSum, &comps, &[2], &start()).unwrap();
        assert_eq!(sum[0].candidate, vec![0, 3]);
    }

    #[test]
    fn total_sum_votes_outside_own_beam() {
        let v = vocab();
        let comps = fixture(&v);
        let lower: Vec<Beam> = comps.iter().map(|c| expand_lower(&start(), c.as_ref(), &[2], 1)).collect();
        // beams: comp0 {a}, comp1 {b}; total-sum still credits both
        let t = tally_votes(&lower, VotingScheme::TotalSum, &comps, &[2], &start()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].candidate, vec![0, 3]);
        assert!((t[0].tally_log.exp() - 1.0).abs() < 1e-12);
        assert!((t[1].tally_log.exp() - 0.8).abs() < 1e-12);
        assert_eq!(t[0].vote_count, 1);
    }

    #[test]
    fn two_component_fixture_decodes_to_b() {
        let v = vocab();
        let comps = fixture(&v);
        let r = ebbs_decode(&comps, &[2], &config(2, 6), EbbsOptions::default()).unwrap();
        assert_eq!(r.output.tokens, vec![0, 3, 1]);
        // tally 1.0 carried into step two and doubled by two unanimous votes
        assert!((r.output.log_score - 2f64.ln()).abs() < 1e-9);
        assert_eq!(r.finished.len(), 2);
        assert_eq!(r.steps_taken, 2);
    }

    #[test]
    fn single_component_matches_beam_search() {
        let v = Arc::new(Vocabulary::with_content(&["a", "b", "c"]).unwrap());
        let mut rng = synth::rng(21);
        for trial in 0..30 {
            let s = synth::random_table_scorer(&mut rng, &v, 5, 0.1);
            let z = 1 + trial % 4;
            for scheme in VotingScheme::ALL {
                let e = ebbs_decode(
                    std::slice::from_ref(&s),
                    &[2],
                    &config(z, 5),
                    EbbsOptions {
                        scheme,
                        ..Default::default()
                    },
                )
                .unwrap();
                let b = beam_search(s.as_ref(), &[2], &config(z, 5)).unwrap();
                assert_eq!(e.output.tokens, b.output.tokens);
                assert_eq!(e.output.log_score.to_bits(), b.output.log_score.to_bits());
                assert_eq!(e.finished, b.finished);
            }
        }
    }

    #[test]
    fn identical_components_behave_like_one() {
        let v = Arc::new(Vocabulary::with_content(&["a", "b", "c"]).unwrap());
        let mut rng = synth::rng(22);
        for _ in 0..20 {
            let s = synth::random_table_scorer(&mut rng, &v, 4, 0.0);
            let one = ebbs_decode(std::slice::from_ref(&s), &[2], &config(3, 4), EbbsOptions::default()).unwrap();
            for scheme in VotingScheme::ALL {
                let three = ebbs_decode(
                    &[s.clone(), s.clone(), s.clone()],
                    &[2],
                    &config(3, 4),
                    EbbsOptions {
                        scheme,
                        ..Default::default()
                    },
                )
                .unwrap();
                assert_eq!(three.output.tokens, one.output.tokens, "{scheme}");
            }
        }
    }

    #[test]
    fn top_z_sum_matches_dictionary_free_recount() {
        let v = Arc::new(Vocabulary::with_content(&["a", "b", "c"]).unwrap());
        let mut rng = synth::rng(23);
        for _ in 0..50 {
            let comps: Vec<SharedScorer> = (0..3).map(|_| synth::random_table_scorer(&mut rng, &v, 3, 0.1)).collect();
            let prev = Beam::top_k(
                vec![
                    Hypothesis { tokens: vec![0, 2], log_score: -0.4, finished: false },
                    Hypothesis { tokens: vec![0, 3], log_score: -1.1, finished: false },
                ],
                2,
            );
            let lower: Vec<Beam> = comps.iter().map(|c| expand_lower(&prev, c.as_ref(), &[2], 3)).collect();
            let tallies = tally_votes(&lower, VotingScheme::TopZSum, &comps, &[2], &prev).unwrap();
            for t in &tallies {
                let mut p = 0.0;
                let mut n = 0;
                for beam in &lower {
                    for h in beam.entries() {
                        if h.tokens == t.candidate {
                            p += h.log_score.exp();
                            n += 1;
                        }
                    }
                }
                assert_eq!(n, t.vote_count);
                assert!((p.ln() - t.tally_log).abs() < 1e-12);
            }
            let union: BTreeSet<Vec<TokenId>> = lower.iter().flat_map(|b| b.iter().map(|h| h.tokens.clone())).collect();
            assert_eq!(union.len(), tallies.len());
        }
    }

    #[test]
    fn lower_beam_entries_are_distinct() {
        let v = Arc::new(Vocabulary::with_content(&["a", "b", "c"]).unwrap());
        let mut rng = synth::rng(24);
        let s = synth::random_table_scorer(&mut rng, &v, 3, 0.0);
        let prev = Beam::top_k(
            vec![
                Hypothesis { tokens: vec![0, 2], log_score: -0.4, finished: false },
                Hypothesis { tokens: vec![0, 3], log_score: -1.1, finished: false },
            ],
            2,
        );
        let b = expand_lower(&prev, s.as_ref(), &[2], 8);
        let distinct: BTreeSet<_> = b.iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(distinct.len(), b.len());
        assert_eq!(b.len(), 2 * v.generable_len());
    }

    #[test]
    fn final_score_variants() {
        let v = vocab();
        let comps = fixture(&v);
        let mut cfg = config(2, 6);
        let r = ebbs_decode(
            &comps,
            &[2],
            &cfg,
            EbbsOptions {
                final_score: FinalScore::ComponentMean,
                ..Default::default()
            },
        )
        .unwrap();
        // mean component probability of <s> b </s> is 0.5, of <s> a </s> is 0.4
        assert_eq!(r.output.tokens, vec![0, 3, 1]);
        assert!((r.output_score - 0.5f64.ln() / 2.0).abs() < 1e-12);
        cfg.length_normalize = false;
        let r = ebbs_decode(&comps, &[2], &cfg, EbbsOptions::default()).unwrap();
        assert!((r.output_score - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in VotingScheme::ALL {
            assert_eq!(s.name().parse::<VotingScheme>().unwrap(), s);
        }
        assert!("sum".parse::<VotingScheme>().is_err());
    }
}
