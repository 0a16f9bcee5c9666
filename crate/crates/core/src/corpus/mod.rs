//! Annotated sentences and the instance formats derived from them.
//!
//! One [`AnnotatedSentence`] feeds three model inputs:
//!
//! * an [`InfillingInstance`], where the precondition clause is replaced by
//!   `[BLANK]`, the target trigger is wrapped in `<event>`..`</event>` and the
//!   output clause carries `<pre>`..`</pre>` around its trigger; optionally a
//!   `<E> trigger` control code closes the input,
//! * a [`TriggerPairInstance`] mapping a reduced target context to the
//!   precondition trigger,
//! * labelled classification records for the re-ranker.

mod jsonl;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::vocab::{BLANK, CONTROL, EOS, EVENT_CLOSE, EVENT_OPEN, PRE_CLOSE, PRE_OPEN, SEP};

pub use jsonl::{read_jsonl, read_sentences, write_jsonl, JsonlError};
pub use split::{assign_splits, base_id, Split};
pub use synth::{synth_corpus, SyntheticCorpusSpec, SyntheticGrammar};

/// Context widths the event sampler is trained with.
pub const SAMPLER_WINDOWS: [usize; 3] = [0, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("record {id}: malformed annotation: {reason}")]
    MalformedAnnotation { id: String, reason: String },
    #[error("record {id}: training instance needs a precondition span")]
    MissingGold { id: String },
    #[error("sampler window {0} is not one of 0, 3, 5")]
    BadWindow(usize),
    #[error("synthetic corpus spec is infeasible: {0}")]
    InfeasibleSpec(String),
    #[error("malformed instance: {0}")]
    MalformedInstance(String),
}

/// Half-open token range `[start, end)` with the index of its head trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub trigger: usize,
}

impl Span {
    pub fn new(start: usize, end: usize, trigger: usize) -> Self {
        Span {
            start,
            end,
            trigger,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Precondition,
    TemporalBefore,
}

/// A sentence with a marked target event and, for training data, a marked
/// precondition (or temporally preceding) event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub target: Span,
    pub precondition: Option<Span>,
    pub label: Option<bool>,
    pub kind: RelationKind,
}

impl AnnotatedSentence {
    pub fn target_trigger(&self) -> &str {
        &self.tokens[self.target.trigger]
    }

    pub fn precondition_trigger(&self) -> Option<&str> {
        self.precondition.map(|s| self.tokens[s.trigger].as_str())
    }

    pub fn is_classification(&self) -> bool {
        self.label.is_some()
    }

    /// Checks span bounds, trigger placement and disjointness.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::MalformedAnnotation {
            id: self.id.clone(),
            reason,
        };
        if self.tokens.is_empty() {
            return Err(bad("empty token list".into()));
        }
        let n = self.tokens.len();
        let check = |name: &str, s: &Span| -> Result<(), CorpusError> {
            if s.start >= s.end || s.end > n {
                return Err(bad(format!(
                    "{name} span [{}, {}) is empty or exceeds {n} tokens",
                    s.start, s.end
                )));
            }
            if s.trigger < s.start || s.trigger >= s.end {
                return Err(bad(format!(
                    "{name} trigger {} lies outside [{}, {})",
                    s.trigger, s.start, s.end
                )));
            }
            Ok(())
        };
        check("target", &self.target)?;
        if let Some(p) = &self.precondition {
            check("precondition", p)?;
            if p.overlaps(&self.target) {
                return Err(bad("target and precondition spans overlap".into()));
            }
        }
        if self.label.is_some() && self.precondition.is_none() {
            return Err(bad("classification record without a candidate span".into()));
        }
        Ok(())
    }

    /// Sentence with the precondition span replaced by one `[BLANK]`, no
    /// markers. Returns the blanked tokens and the target trigger's index in
    /// them.
    pub fn blanked(&self) -> Result<(Vec<String>, usize), CorpusError> {
        self.validate()?;
        let pre = self.precondition.ok_or_else(|| CorpusError::MissingGold {
            id: self.id.clone(),
        })?;
        Ok(blank_tokens(&self.tokens, &pre, self.target.trigger))
    }
}

fn blank_tokens(tokens: &[String], pre: &Span, target_trigger: usize) -> (Vec<String>, usize) {
    let mut out = Vec::with_capacity(tokens.len() - pre.len() + 1);
    out.extend_from_slice(&tokens[..pre.start]);
    out.push(BLANK.to_owned());
    out.extend_from_slice(&tokens[pre.end..]);
    let trigger = if target_trigger >= pre.end {
        target_trigger - pre.len() + 1
    } else {
        target_trigger
    };
    (out, trigger)
}

/// A masked sentence plus the clause that fills its blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillingInstance {
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
}

impl InfillingInstance {
    /// Trigger of a trailing `<E> trigger` control code.
    pub fn control_code(&self) -> Option<&str> {
        match self.input_tokens.as_slice() {
            [.., c, t] if c == CONTROL => Some(t),
            _ => None,
        }
    }

    pub fn target_trigger(&self) -> Option<&str> {
        let open = self.input_tokens.iter().position(|t| t == EVENT_OPEN)?;
        self.input_tokens.get(open + 1).map(String::as_str)
    }

    /// Trigger inside `<pre>`..`</pre>` of the output clause.
    pub fn output_trigger(&self) -> Option<&str> {
        marked_trigger(&self.output_tokens)
    }

    pub fn with_control_code(&self, trigger: &str) -> Self {
        let mut out = self.without_control_code();
        out.input_tokens.push(CONTROL.to_owned());
        out.input_tokens.push(trigger.to_owned());
        out
    }

    pub fn without_control_code(&self) -> Self {
        let mut out = self.clone();
        if self.control_code().is_some() {
            out.input_tokens.truncate(out.input_tokens.len() - 2);
        }
        out
    }

    /// Inference view: no gold output and no control code.
    pub fn for_inference(&self) -> Self {
        let mut out = self.without_control_code();
        out.output_tokens.clear();
        out
    }

    /// `input <sep>`, the prefix a generator continues from.
    pub fn prompt(&self) -> Vec<String> {
        let mut p = self.input_tokens.clone();
        p.push(SEP.to_owned());
        p
    }

    /// `input <sep> output <eos>`, one training sequence.
    pub fn training_sequence(&self) -> Vec<String> {
        let mut p = self.prompt();
        p.extend(self.output_tokens.iter().cloned());
        p.push(EOS.to_owned());
        p
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::MalformedInstance(m.to_owned()));
        let count = |tok: &str| self.input_tokens.iter().filter(|t| *t == tok).count();
        if count(BLANK) != 1 {
            return bad("input must contain exactly one [BLANK]");
        }
        if count(EVENT_OPEN) != 1 || count(EVENT_CLOSE) != 1 {
            return bad("input must contain exactly one <event> ... </event> pair");
        }
        let n_codes = count(CONTROL);
        let code = self.control_code();
        if n_codes > 1 || (n_codes == 1 && code.is_none()) {
            return bad("control code must be the final two input tokens");
        }
        if let Some(c) = code {
            if !self.output_tokens.is_empty() && !self.output_tokens.iter().any(|t| t == c) {
                return bad("control-code trigger missing from the output clause");
            }
        }
        Ok(())
    }

    /// Puts the output clause (markers stripped) back into the blank and
    /// drops the event markers and control code.
    pub fn reconstruct(&self) -> Vec<String> {
        let base = self.without_control_code();
        let mut out = Vec::new();
        for t in &base.input_tokens {
            match t.as_str() {
                BLANK => out.extend(
                    self.output_tokens
                        .iter()
                        .filter(|o| *o != PRE_OPEN && *o != PRE_CLOSE)
                        .cloned(),
                ),
                EVENT_OPEN | EVENT_CLOSE => {}
                _ => out.push(t.clone()),
            }
        }
        out
    }
}

/// First token after a `<pre>` marker.
pub fn marked_trigger<S: AsRef<str>>(tokens: &[S]) -> Option<&str> {
    let pos = tokens.iter().position(|t| t.as_ref() == PRE_OPEN)?;
    tokens
        .get(pos + 1)
        .map(AsRef::as_ref)
        .filter(|t| !crate::vocab::is_special_token(t))
}

/// Reduced target context and the precondition trigger to predict from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerPairInstance {
    pub reduced_context: Vec<String>,
    pub precondition_trigger: String,
    pub window: usize,
}

impl TriggerPairInstance {
    pub fn prompt(&self) -> Vec<String> {
        let mut p = self.reduced_context.clone();
        p.push(SEP.to_owned());
        p
    }

    /// `context <sep> trigger <eos>`.
    pub fn training_sequence(&self) -> Vec<String> {
        let mut p = self.prompt();
        p.push(self.precondition_trigger.clone());
        p.push(EOS.to_owned());
        p
    }
}

/// Masks the precondition clause and marks both events.
pub fn build_infilling_instance(
    sentence: &AnnotatedSentence,
    with_control_code: bool,
) -> Result<InfillingInstance, CorpusError> {
    sentence.validate()?;
    let pre = sentence
        .precondition
        .ok_or_else(|| CorpusError::MissingGold {
            id: sentence.id.clone(),
        })?;
    let (blanked, trig) = blank_tokens(&sentence.tokens, &pre, sentence.target.trigger);

    let mut input = Vec::with_capacity(blanked.len() + 4);
    input.extend_from_slice(&blanked[..trig]);
    input.push(EVENT_OPEN.to_owned());
    input.push(blanked[trig].clone());
    input.push(EVENT_CLOSE.to_owned());
    input.extend_from_slice(&blanked[trig + 1..]);

    let mut output = Vec::with_capacity(pre.len() + 2);
    for (i, tok) in sentence.tokens[pre.start..pre.end].iter().enumerate() {
        if pre.start + i == pre.trigger {
            output.push(PRE_OPEN.to_owned());
            output.push(tok.clone());
            output.push(PRE_CLOSE.to_owned());
        } else {
            output.push(tok.clone());
        }
    }

    let inst = InfillingInstance {
        input_tokens: input,
        output_tokens: output,
    };
    Ok(if with_control_code {
        inst.with_control_code(&sentence.tokens[pre.trigger])
    } else {
        inst
    })
}

/// Inference-time instance for a sentence without a gold precondition:
/// `[BLANK]` is inserted before token `blank_at`.
pub fn build_blanked_instance(
    id: &str,
    tokens: &[String],
    target: Span,
    blank_at: usize,
) -> Result<InfillingInstance, CorpusError> {
    let sentence = AnnotatedSentence {
        id: id.to_owned(),
        tokens: tokens.to_vec(),
        target,
        precondition: None,
        label: None,
        kind: RelationKind::Precondition,
    };
    sentence.validate()?;
    if blank_at > tokens.len() || (blank_at > target.start && blank_at < target.end) {
        return Err(CorpusError::MalformedAnnotation {
            id: id.to_owned(),
            reason: format!("blank position {blank_at} falls inside the target span"),
        });
    }
    let mut input = Vec::with_capacity(tokens.len() + 3);
    for (i, tok) in tokens.iter().enumerate() {
        if i == blank_at {
            input.push(BLANK.to_owned());
        }
        if i == target.trigger {
            input.push(EVENT_OPEN.to_owned());
            input.push(tok.clone());
            input.push(EVENT_CLOSE.to_owned());
        } else {
            input.push(tok.clone());
        }
    }
    if blank_at == tokens.len() {
        input.push(BLANK.to_owned());
    }
    Ok(InfillingInstance {
        input_tokens: input,
        output_tokens: Vec::new(),
    })
}

/// Target trigger with up to `window` neighbours on each side, taken from the
/// blanked sentence so the gold clause never leaks into the context.
pub fn build_trigger_pair(
    sentence: &AnnotatedSentence,
    window: usize,
) -> Result<TriggerPairInstance, CorpusError> {
    if !SAMPLER_WINDOWS.contains(&window) {
        return Err(CorpusError::BadWindow(window));
    }
    let (blanked, trig) = sentence.blanked()?;
    let lo = trig.saturating_sub(window);
    let hi = (trig + window + 1).min(blanked.len());
    Ok(TriggerPairInstance {
        reduced_context: blanked[lo..hi].to_vec(),
        precondition_trigger: sentence
            .precondition_trigger()
            .expect("blanked() checked the span")
            .to_owned(),
        window,
    })
}

/// Reduced context for a target in an inference instance.
pub fn reduced_context(
    instance: &InfillingInstance,
    window: usize,
) -> Result<Vec<String>, CorpusError> {
    if !SAMPLER_WINDOWS.contains(&window) {
        return Err(CorpusError::BadWindow(window));
    }
    let plain: Vec<String> = instance
        .without_control_code()
        .input_tokens
        .into_iter()
        .filter(|t| t != EVENT_OPEN && t != EVENT_CLOSE)
        .collect();
    let open = instance
        .input_tokens
        .iter()
        .position(|t| t == EVENT_OPEN)
        .ok_or_else(|| CorpusError::MalformedInstance("no <event> marker".into()))?;
    let lo = open.saturating_sub(window);
    let hi = (open + window + 1).min(plain.len());
    Ok(plain[lo..hi].to_vec())
}
