//! Generated precondition clauses.

use serde::{Deserialize, Serialize};

use crate::corpus::marked_trigger;
use crate::scalar::Scalar;
use crate::vocab::strip_special;

/// Strategy that produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Dip,
    Rps,
    Beam,
}

/// One generated clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    /// Control-code trigger for generator candidates, the token after `<pre>`
    /// otherwise. `None` when the clause has no trigger slot.
    pub trigger: Option<String>,
    /// Generated clause, markers included, `<eos>` excluded.
    pub text: Vec<String>,
    pub lm_logprob: T,
    pub rank_score: Option<T>,
    pub embedding: Option<Vec<T>>,
    pub origin: Origin,
    /// `<eos>` was produced within the length budget.
    pub ended: bool,
}

impl<T: Scalar> Candidate<T> {
    pub fn new(
        origin: Origin,
        trigger: Option<String>,
        text: Vec<String>,
        lm_logprob: T,
        ended: bool,
    ) -> Self {
        Candidate {
            trigger,
            text,
            lm_logprob,
            rank_score: None,
            embedding: None,
            origin,
            ended,
        }
    }

    /// Token following `<pre>` in the generated text.
    pub fn marked_trigger(&self) -> Option<&str> {
        marked_trigger(&self.text)
    }

    pub fn has_pre_marker(&self) -> bool {
        self.marked_trigger().is_some()
    }

    /// Whether the trigger token appears among the generated words.
    pub fn trigger_included(&self) -> bool {
        match &self.trigger {
            Some(t) => self.text.iter().any(|w| w == t),
            None => false,
        }
    }

    /// Truncated before `<eos>`. Sampled clauses without a control code
    /// must also carry a `<pre>` trigger slot.
    pub fn is_malformed(&self) -> bool {
        match self.origin {
            Origin::Dip => !self.ended,
            Origin::Rps | Origin::Beam => !self.ended || !self.has_pre_marker(),
        }
    }

    /// Clause words with every reserved token removed.
    pub fn clean_text(&self) -> Vec<String> {
        strip_special(&self.text)
    }
}
