//! Word-level ensembles: components are combined per decoding step and the
//! result is fed to ordinary beam search.

use std::cmp::Ordering;

use super::{shared_vocab, Scorer, SharedScorer};
use crate::error::Result;
use crate::logmath::log_sum_exp;
use crate::vocab::{TokenId, Vocabulary};

/// `ln((1/K) Σ_k p_k(y))` for every token.
pub struct AveragingScorer {
    components: Vec<SharedScorer>,
    vocab: Vocabulary,
}

impl AveragingScorer {
    pub fn new(components: Vec<SharedScorer>) -> Result<Self> {
        let vocab = shared_vocab(&components)?.clone();
        Ok(Self { components, vocab })
    }
}

impl Scorer for AveragingScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_log_distribution(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let dists: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| c.next_log_distribution(input, prefix))
            .collect();
        if dists.len() == 1 {
            return dists.into_iter().next().unwrap();
        }
        let ln_k = (dists.len() as f64).ln();
        let mut column = Vec::with_capacity(dists.len());
        (0..self.vocab.len())
            .map(|y| {
                column.clear();
                column.extend(dists.iter().map(|d| d[y]));
                log_sum_exp(&column) - ln_k
            })
            .collect()
    }
}

/// Plurality vote over the components' argmax tokens.
///
/// The winning token is the one with the most votes; ties go to the token
/// whose proponents hold the single highest probability, then to the lower
/// token id. The returned distribution is the full distribution of the
/// strongest proponent of the winning token, so beam search can still
/// expand every token.
pub struct VotingScorer {
    components: Vec<SharedScorer>,
    vocab: Vocabulary,
}

impl VotingScorer {
    pub fn new(components: Vec<SharedScorer>) -> Result<Self> {
        let vocab = shared_vocab(&components)?.clone();
        Ok(Self { components, vocab })
    }
}

/// Index of the highest entry; ties go to the lower index.
fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in dist.iter().enumerate() {
        if *v > dist[best] {
            best = i;
        }
    }
    best
}

/// Picks the winning component among `dists`.
pub(crate) fn vote(dists: &[Vec<f64>]) -> usize {
    struct Tally {
        votes: usize,
        best_component: usize,
        best_logp: f64,
    }
    let mut tallies: Vec<(usize, Tally)> = Vec::new();
    for (k, d) in dists.iter().enumerate() {
        let token = argmax(d);
        let logp = d[token];
        match tallies.iter_mut().find(|(t, _)| *t == token) {
            Some((_, tally)) => {
                tally.votes += 1;
                let better = match logp.total_cmp(&tally.best_logp) {
                    Ordering::Greater => true,
                    // equal strength: compare whole distributions so the
                    // choice does not depend on component order
                    Ordering::Equal => lexicographic(d, &dists[tally.best_component]) == Ordering::Greater,
                    Ordering::Less => false,
                };
                if better {
                    tally.best_component = k;
                    tally.best_logp = logp;
                }
            }
            None => tallies.push((
                token,
                Tally {
                    votes: 1,
                    best_component: k,
                    best_logp: logp,
                },
            )),
        }
    }
    tallies
        .into_iter()
        .max_by(|(ta, a), (tb, b)| {
            a.votes
                .cmp(&b.votes)
                .then(a.best_logp.total_cmp(&b.best_logp))
                .then(tb.cmp(ta))
        })
        .map(|(_, t)| t.best_component)
        .expect("at least one component")
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

impl Scorer for VotingScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_log_distribution(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut dists: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| c.next_log_distribution(input, prefix))
            .collect();
        let winner = vote(&dists);
        dists.swap_remove(winner)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::scorer::test_support::{probs, table};
    use crate::scorer::normalization_error;

    // <s>=0 </s>=1 a=2 b=3
    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::with_content(&["a", "b"]).unwrap())
    }

    fn p1(v: &Arc<Vocabulary>) -> SharedScorer {
        table(v, &[(&[0], &[0.0, 0.1, 0.6, 0.3])], None)
    }

    fn p2(v: &Arc<Vocabulary>) -> SharedScorer {
        table(v, &[(&[0], &[0.0, 0.1, 0.2, 0.7])], None)
    }

    #[test]
    fn averaging_hand_example() {
        let v = vocab();
        let avg = AveragingScorer::new(vec![p1(&v), p2(&v)]).unwrap();
        let p = probs(&avg.next_log_distribution(&[], &[0]));
        assert!((p[2] - 0.4).abs() < 1e-12);
        assert!((p[3] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.1).abs() < 1e-12);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn averaging_single_and_identical_components() {
        let v = vocab();
        let single = AveragingScorer::new(vec![p1(&v)]).unwrap();
        assert_eq!(single.next_log_distribution(&[], &[0]), p1(&v).next_log_distribution(&[], &[0]));
        let twice = AveragingScorer::new(vec![p1(&v), p1(&v)]).unwrap();
        let a = twice.next_log_distribution(&[], &[0]);
        let b = p1(&v).next_log_distribution(&[], &[0]);
        for (x, y) in a.iter().skip(1).zip(b.iter().skip(1)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(normalization_error(&a) < 1e-12);
    }

    #[test]
    fn averaging_is_permutation_invariant() {
        let v = vocab();
        let c = table(&v, &[(&[0], &[0.0, 0.25, 0.25, 0.5])], None);
        let ab = AveragingScorer::new(vec![p1(&v), p2(&v), c.clone()]).unwrap();
        let ba = AveragingScorer::new(vec![c, p2(&v), p1(&v)]).unwrap();
        assert_eq!(ab.next_log_distribution(&[], &[0]), ba.next_log_distribution(&[], &[0]));
    }

    #[test]
    fn empty_components_rejected() {
        assert!(AveragingScorer::new(vec![]).is_err());
        assert!(VotingScorer::new(vec![]).is_err());
    }

    #[test]
    fn mismatched_vocabularies_rejected() {
        let v = vocab();
        let w = Arc::new(Vocabulary::with_content(&["a", "c"]).unwrap());
        let other = table(&w, &[], None);
        assert!(AveragingScorer::new(vec![p1(&v), other]).is_err());
    }

    #[test]
    fn voting_tie_goes_to_stronger_proponent() {
        let v = vocab();
        let vote = VotingScorer::new(vec![p1(&v), p2(&v)]).unwrap();
        assert_eq!(vote.next_log_distribution(&[], &[0]), p2(&v).next_log_distribution(&[], &[0]));
        let flipped = VotingScorer::new(vec![p2(&v), p1(&v)]).unwrap();
        assert_eq!(flipped.next_log_distribution(&[], &[0]), p2(&v).next_log_distribution(&[], &[0]));
    }

    #[test]
    fn voting_unanimous_returns_strongest_proponent() {
        let v = vocab();
        let weak = table(&v, &[(&[0], &[0.0, 0.2, 0.45, 0.35])], None);
        let vote = VotingScorer::new(vec![weak, p1(&v)]).unwrap();
        assert_eq!(vote.next_log_distribution(&[], &[0]), p1(&v).next_log_distribution(&[], &[0]));
    }

    #[test]
    fn voting_majority_beats_confidence() {
        let v = vocab();
        let a1 = table(&v, &[(&[0], &[0.0, 0.2, 0.45, 0.35])], None);
        let a2 = table(&v, &[(&[0], &[0.0, 0.2, 0.5, 0.3])], None);
        let b = table(&v, &[(&[0], &[0.0, 0.0, 0.05, 0.95])], None);
        let vote = VotingScorer::new(vec![a1, b, a2.clone()]).unwrap();
        assert_eq!(vote.next_log_distribution(&[], &[0]), a2.next_log_distribution(&[], &[0]));
    }

    #[test]
    fn voting_single_component_is_identity() {
        let v = vocab();
        let vote = VotingScorer::new(vec![p1(&v)]).unwrap();
        assert_eq!(vote.next_log_distribution(&[], &[0]), p1(&v).next_log_distribution(&[], &[0]));
    }
}
