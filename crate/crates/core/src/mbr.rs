//! Minimum Bayes risk selection: the candidate most similar, by BLEU, to
//! all the others.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Bleu;
use crate::vocab::TokenId;

/// Relative tolerance under which two utilities count as tied.
pub const UTILITY_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbrSelection {
    pub index: usize,
    pub utility: f64,
}

/// `BLEU(hyp, reference)`, or 0 when either side has no countable tokens.
pub fn similarity(bleu: &Bleu, hyp: &[TokenId], reference: &[TokenId]) -> f64 {
    bleu.sentence(hyp, reference).map_or(0.0, |s| s.score)
}

/// `Σ_{j≠i} BLEU(c_i, c_j)` for every candidate `i`, summed in index order.
pub fn utilities(bleu: &Bleu, candidates: &[Vec<TokenId>]) -> Vec<f64> {
    (0..candidates.len())
        .into_par_iter()
        .map(|i| {
            candidates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, other)| similarity(bleu, &candidates[i], other))
                .sum()
        })
        .collect()
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= UTILITY_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Picks the candidate with the highest summed BLEU against the rest.
/// Duplicates are kept, so repeated candidates support each other. Ties go
/// to the lexicographically smaller candidate, then the smaller index.
pub fn mbr_select(bleu: &Bleu, candidates: &[Vec<TokenId>]) -> Result<MbrSelection> {
    if candidates.is_empty() {
        return Err(Error::data("MBR needs at least one candidate"));
    }
    let u = utilities(bleu, candidates);
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = if tied(u[i], u[best]) {
            candidates[i] < candidates[best]
        } else {
            u[i] > u[best]
        };
        if better {
            best = i;
        }
    }
    Ok(MbrSelection {
        index: best,
        utility: u[best],
    })
}
