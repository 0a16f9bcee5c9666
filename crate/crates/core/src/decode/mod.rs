//! Decoding strategies over any [`SequenceModel`](crate::lm::SequenceModel):
//! beam search, nucleus sampling, and repetition-penalized sampling (RPS)
//! scoped to precondition trigger positions.

mod beam;
mod rng;
mod rps;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::lm::LmError;
use crate::scalar::Scalar;
use crate::vocab::TokenId;

pub use beam::beam_search;
pub use rng::{rng_for, uniform, DecodeRng};
pub use rps::{rps_generate, PenaltyState};
pub use sampling::{
    nucleus_truncate, penalized_dist, sample_continuation, trigger_logits, SampledSequence,
};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("invalid decode configuration: {0}")]
    Config(String),
    #[error("invalid decode input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig<T> {
    /// Maximum number of generated tokens, `<eos>` included.
    pub max_len: usize,
    pub beam_width: usize,
    pub nucleus_p: T,
    /// Repetition penalty applied at trigger positions.
    pub penalty: T,
    pub seed: u64,
    /// Beam scores are `logprob / len^alpha`.
    pub length_norm_alpha: T,
}

impl<T: Scalar> Default for DecodeConfig<T> {
    fn default() -> Self {
        DecodeConfig {
            max_len: 24,
            beam_width: 10,
            nucleus_p: T::from_f64_lossy(0.9),
            penalty: T::from_f64_lossy(1.2),
            seed: 0,
            length_norm_alpha: T::zero(),
        }
    }
}

impl<T: Scalar> DecodeConfig<T> {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::Config(m));
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if self.beam_width == 0 {
            return bad("beam width must be at least 1".into());
        }
        if !(self.nucleus_p > T::zero() && self.nucleus_p <= T::one()) {
            return bad(format!("nucleus p {} must lie in (0, 1]", self.nucleus_p));
        }
        if !(self.penalty >= T::one()) || !self.penalty.is_finite() {
            return bad(format!(
                "penalty {} must be a finite value >= 1",
                self.penalty
            ));
        }
        if !(self.length_norm_alpha >= T::zero()) {
            return bad(format!(
                "length normalisation {} must be >= 0",
                self.length_norm_alpha
            ));
        }
        Ok(())
    }
}

/// A decoded continuation. `tokens` excludes the final `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<T> {
    pub tokens: Vec<TokenId>,
    pub logprob: T,
    /// Ended with `<eos>` or reached `max_len`.
    pub finished: bool,
    /// Ended with `<eos>`.
    pub ended: bool,
}

impl<T: Scalar> Hypothesis<T> {
    /// Decoding steps taken, `<eos>` included.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.ended)
    }

    pub fn score(&self, alpha: T) -> T {
        length_normalized(self.logprob, self.steps(), alpha)
    }
}

pub(crate) fn length_normalized<T: Scalar>(logprob: T, steps: usize, alpha: T) -> T {
    if alpha == T::zero() || steps == 0 {
        logprob
    } else {
        logprob
            / T::from_usize(steps)
                .expect("length fits a float")
                .powf(alpha)
    }
}
