use std::collections::BTreeSet;

use rand::Rng;

use super::sampling::sample_continuation;
use super::{DecodeConfig, DecodeError};
use crate::candidate::{Candidate, Origin};
use crate::corpus::InfillingInstance;
use crate::lm::{sequence_logprob, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, EOS_ID};

/// Triggers produced by earlier iterations of one RPS run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PenaltyState {
    triggers: BTreeSet<TokenId>,
}

impl PenaltyState {
    pub fn insert(&mut self, token: TokenId) -> bool {
        self.triggers.insert(token)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.triggers.contains(&token)
    }

    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.triggers.iter().copied()
    }
}

/// Draws `num_iterations` clauses for `instance`, penalizing at each trigger
/// slot every trigger sampled so far.
///
/// Candidates without a `<pre>` trigger slot or without `<eos>` are returned
/// with their flags set and leave the penalty state untouched.
pub fn rps_generate<T, M, R>(
    model: &M,
    instance: &InfillingInstance,
    num_iterations: usize,
    config: &DecodeConfig<T>,
    rng: &mut R,
) -> Result<Vec<Candidate<T>>, DecodeError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    if let Some(code) = instance.control_code() {
        return Err(DecodeError::Input(format!(
            "repetition-penalized sampling expects a plain instance, found control code {code:?}"
        )));
    }
    config.validate()?;
    let vocab = model.vocab();
    let prompt = vocab
        .encode(&instance.prompt())
        .map_err(crate::lm::LmError::from)?;
    let mut state = PenaltyState::default();
    let mut out = Vec::with_capacity(num_iterations);
    for _ in 0..num_iterations {
        let s = sample_continuation(model, &prompt, config, rng, Some(&state))?;
        let mut scored = s.tokens.clone();
        if s.ended {
            scored.push(EOS_ID);
        }
        let lm_logprob = if scored.is_empty() {
            T::zero()
        } else {
            sequence_logprob(model, &prompt, &scored)?
        };
        let text = vocab.decode(&s.tokens).map_err(crate::lm::LmError::from)?;
        let trigger = match s.trigger {
            Some(t) => Some(vocab.token(t).map_err(crate::lm::LmError::from)?.to_owned()),
            None => None,
        };
        let cand = Candidate::new(Origin::Rps, trigger, text, lm_logprob, s.ended);
        if let (false, Some(t)) = (cand.is_malformed(), s.trigger) {
            state.insert(t);
        }
        out.push(cand);
    }
    Ok(out)
}
