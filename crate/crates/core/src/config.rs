use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::Hypothesis;
use crate::vocab::TokenId;

/// Beam sizes and length limits shared by every decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Lower-level beam size; also the beam size of plain beam search.
    pub lower_beam: usize,
    /// Upper-level (shared) beam size.
    pub upper_beam: usize,
    /// `a` in `max_len = ceil(a * |x|) + b`.
    pub max_len_factor: f64,
    /// `b` in `max_len = ceil(a * |x|) + b`.
    pub max_len_offset: usize,
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lower_beam: 5,
            upper_beam: 5,
            max_len_factor: 2.0,
            max_len_offset: 8,
            length_normalize: true,
        }
    }
}

impl DecodeConfig {
    /// Same beam size at both levels.
    pub fn with_beam(beam: usize) -> Self {
        Self {
            lower_beam: beam,
            upper_beam: beam,
            ..Self::default()
        }
    }

    /// Checks hard constraints and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.lower_beam == 0 || self.upper_beam == 0 {
            return Err(Error::config("beam sizes must be positive"));
        }
        if !self.max_len_factor.is_finite() || self.max_len_factor < 0.0 {
            return Err(Error::config("max length factor must be a non-negative number"));
        }
        let mut warnings = Vec::new();
        if self.upper_beam > self.lower_beam {
            let msg = format!(
                "upper beam ({}) exceeds lower beam ({}); the shared beam may not fill",
                self.upper_beam, self.lower_beam
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(warnings)
    }

    /// Maximum number of generated tokens (end marker included) for an input
    /// of `input_len` tokens. Never below 2.
    pub fn max_len(&self, input_len: usize) -> usize {
        let scaled = (self.max_len_factor * input_len as f64).ceil() as usize;
        (scaled + self.max_len_offset).max(2)
    }
}

/// Per-step search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Distinct candidates scored before pruning.
    pub candidates: usize,
    /// Hypotheses that moved to the finished set this step.
    pub finished: usize,
    /// Unfinished hypotheses carried to the next step.
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Selected hypothesis.
    pub output: Hypothesis,
    /// Selection score of `output` (length-normalized when configured).
    pub output_score: f64,
    /// Finished hypotheses in the order they were found.
    pub finished: Vec<Hypothesis>,
    pub steps_taken: usize,
    /// The maximum length was reached and open hypotheses were closed.
    pub forced_stop: bool,
    pub steps: Vec<StepStats>,
    pub warnings: Vec<String>,
    /// Pivot-language intermediate, when the output came from a pivot path.
    pub intermediate: Option<Vec<TokenId>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_len_formula() {
        let c = DecodeConfig::default();
        assert_eq!(c.max_len(3), 14);
        let c = DecodeConfig {
            max_len_factor: 0.0,
            max_len_offset: 0,
            ..DecodeConfig::default()
        };
        assert_eq!(c.max_len(10), 2);
        let c = DecodeConfig {
            max_len_factor: 1.5,
            max_len_offset: 1,
            ..DecodeConfig::default()
        };
        assert_eq!(c.max_len(3), 6);
    }

    #[test]
    fn oversized_upper_beam_is_a_warning() {
        let c = DecodeConfig {
            lower_beam: 2,
            upper_beam: 4,
            ..DecodeConfig::default()
        };
        assert_eq!(c.validate().unwrap().len(), 1);
        assert!(DecodeConfig::with_beam(5).validate().unwrap().is_empty());
        assert!(DecodeConfig::with_beam(0).validate().is_err());
    }
}
