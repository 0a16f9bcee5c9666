//! Templated synthetic corpus with planted precondition structure.
//!
//! Every target trigger type owns `preconditions_per_target` precondition
//! triggers. A sentence has three clauses: the precondition clause, the target
//! clause, and a distractor event clause that is not a precondition. The
//! distractor provides the negative pair for re-ranker training. Targets share
//! a pair of subject nouns with their precondition clauses; objects are drawn
//! from a Zipf-weighted pool and each precondition clause ends in a day name.

use std::collections::HashSet;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, CorpusError, RelationKind, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub num_target_types: usize,
    pub preconditions_per_target: usize,
    /// Sentences rendered per (target, precondition) pair.
    pub templates_per_pair: usize,
    /// Upper bound on distinct word types, function words included.
    pub vocab_size: usize,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let counts = [
            ("num_target_types", self.num_target_types),
            ("preconditions_per_target", self.preconditions_per_target),
            ("templates_per_pair", self.templates_per_pair),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CorpusError::InfeasibleSpec(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        let needed = self.required_vocab();
        if needed > self.vocab_size {
            return Err(CorpusError::InfeasibleSpec(format!(
                "{} target types with {} preconditions each need a vocabulary of at least {needed}, got {}",
                self.num_target_types, self.preconditions_per_target, self.vocab_size
            )));
        }
        Ok(())
    }

    fn num_distractors(&self) -> usize {
        self.num_target_types.max(3)
    }

    fn num_temporal(&self) -> usize {
        (self.num_target_types / 2).max(3)
    }

    fn required_vocab(&self) -> usize {
        let t = self.num_target_types;
        FUNCTION_WORDS.len()
            + DAYS.len()
            + t
            + t * self.preconditions_per_target
            + self.num_distractors()
            + self.num_temporal()
            + 2 * t
            + MIN_OBJECTS
    }
}

const MIN_OBJECTS: usize = 8;
const FUNCTION_WORDS: [&str; 10] = [
    "the", "a", "could", "so", "that", "after", "while", "on", ",", ".",
];
const DAYS: [&str; 7] = [
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

const TARGET_LEXICON: [&str; 24] = [
    "rebuild", "cancel", "fill", "start", "give", "maintain", "scout", "hit", "help", "open",
    "close", "repair", "launch", "sell", "win", "finish", "sign", "leave", "expand", "renovate",
    "reopen", "deliver", "attend", "visit",
];
const EVENT_LEXICON: [&str; 40] = [
    "lost",
    "took",
    "planned",
    "began",
    "approved",
    "asked",
    "used",
    "voted",
    "reached",
    "bought",
    "found",
    "needed",
    "moved",
    "agreed",
    "raised",
    "passed",
    "filed",
    "sent",
    "designed",
    "completed",
    "signed",
    "funded",
    "ordered",
    "trained",
    "invited",
    "studied",
    "saved",
    "borrowed",
    "built",
    "rented",
    "hired",
    "inspired",
    "requested",
    "appointed",
    "collected",
    "prepared",
    "booked",
    "packed",
    "earned",
    "cleared",
];
const NOUN_LEXICON: [&str; 40] = [
    "city", "council", "board", "team", "family", "company", "senate", "school", "museum",
    "hospital", "bank", "club", "court", "agency", "league", "union", "church", "station",
    "market", "studio", "tenants", "nation", "staff", "mayor", "coach", "firm", "budget", "bridge",
    "plan", "contract", "money", "permit", "site", "program", "ball", "deal", "truck", "office",
    "report", "crew",
];

/// Slot fillers for one rendered sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSlots {
    pub form: usize,
    pub target: String,
    pub precondition: String,
    pub distractor: String,
    pub subject: String,
    pub target_subject: String,
    pub pre_object: String,
    pub target_object: String,
    pub distractor_subject: String,
    pub distractor_object: String,
    pub day: String,
}

/// A rendered sentence and the spans of its three clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSentence {
    pub tokens: Vec<String>,
    pub target: Span,
    pub precondition: Span,
    pub distractor: Span,
}

/// Word pools of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SyntheticGrammar {
    pub targets: Vec<String>,
    pub preconditions: Vec<Vec<String>>,
    pub distractors: Vec<String>,
    pub temporal: Vec<String>,
    pub subjects: Vec<[String; 2]>,
    pub objects: Vec<String>,
    object_weights: WeightedIndex<f64>,
}

struct WordSource {
    used: HashSet<String>,
    counter: usize,
}

impl WordSource {
    fn new() -> Self {
        let used = FUNCTION_WORDS
            .iter()
            .chain(DAYS.iter())
            .map(|s| s.to_string())
            .collect();
        WordSource { used, counter: 0 }
    }

    fn pseudo(&mut self) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let mut c = self.counter;
            self.counter += 1;
            let mut w = String::with_capacity(6);
            for _ in 0..3 {
                let syl = c % (C.len() * V.len());
                c /= C.len() * V.len();
                w.push(C[syl / V.len()] as char);
                w.push(V[syl % V.len()] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn take(&mut self, lexicon: &[&str], cursor: &mut usize, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if *cursor < lexicon.len() {
                let w = lexicon[*cursor].to_owned();
                *cursor += 1;
                if self.used.insert(w.clone()) {
                    out.push(w);
                }
            } else {
                out.push(self.pseudo());
            }
        }
        out
    }
}

impl SyntheticGrammar {
    pub const NUM_FORMS: usize = 3;

    pub fn new(spec: &SyntheticCorpusSpec) -> Result<Self, CorpusError> {
        spec.validate()?;
        let t = spec.num_target_types;
        let mut src = WordSource::new();
        let (mut tc, mut ec, mut nc) = (0, 0, 0);
        let targets = src.take(&TARGET_LEXICON, &mut tc, t);
        let preconditions = (0..t)
            .map(|_| src.take(&EVENT_LEXICON, &mut ec, spec.preconditions_per_target))
            .collect();
        let distractors = src.take(&EVENT_LEXICON, &mut ec, spec.num_distractors());
        let temporal = src.take(&EVENT_LEXICON, &mut ec, spec.num_temporal());
        let subjects = (0..t)
            .map(|_| {
                let pair = src.take(&NOUN_LEXICON, &mut nc, 2);
                [pair[0].clone(), pair[1].clone()]
            })
            .collect();
        let used = spec.required_vocab() - MIN_OBJECTS;
        let objects = src.take(&NOUN_LEXICON, &mut nc, spec.vocab_size - used);
        let object_weights = WeightedIndex::new((0..objects.len()).map(|r| 1.0 / (r as f64 + 1.0)))
            .expect("object pool is non-empty");
        Ok(SyntheticGrammar {
            targets,
            preconditions,
            distractors,
            temporal,
            subjects,
            objects,
            object_weights,
        })
    }

    fn object<R: Rng>(&self, rng: &mut R) -> String {
        self.objects[self.object_weights.sample(rng)].clone()
    }

    /// Draws the free slots for a (target, precondition) pair.
    pub fn sample_slots<R: Rng>(
        &self,
        form: usize,
        target_idx: usize,
        precondition: &str,
        rng: &mut R,
    ) -> SentenceSlots {
        let others: Vec<&String> = self
            .preconditions
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target_idx)
            .flat_map(|(_, p)| p.iter())
            .collect();
        let distractor = if !others.is_empty() && rng.gen_bool(0.5) {
            (*others.choose(rng).expect("non-empty")).clone()
        } else {
            self.distractors.choose(rng).expect("non-empty").clone()
        };
        let subjects = &self.subjects[target_idx];
        SentenceSlots {
            form,
            target: self.targets[target_idx].clone(),
            precondition: precondition.to_owned(),
            distractor,
            subject: subjects[rng.gen_range(0..2)].clone(),
            target_subject: subjects[rng.gen_range(0..2)].clone(),
            pre_object: self.object(rng),
            target_object: self.object(rng),
            distractor_subject: self.object(rng),
            distractor_object: self.object(rng),
            day: DAYS.choose(rng).expect("non-empty").to_string(),
        }
    }

    /// Renders one sentence. Pure in its slots.
    pub fn render(slots: &SentenceSlots) -> RenderedSentence {
        let s = |x: &str| x.to_owned();
        let pre_clause = vec![
            s("the"),
            slots.subject.clone(),
            slots.precondition.clone(),
            s("the"),
            slots.pre_object.clone(),
            s("on"),
            slots.day.clone(),
        ];
        let target_clause = vec![
            s("the"),
            slots.target_subject.clone(),
            s("could"),
            slots.target.clone(),
            s("the"),
            slots.target_object.clone(),
        ];
        let dis_clause = vec![
            s("the"),
            slots.distractor_subject.clone(),
            slots.distractor.clone(),
            s("a"),
            slots.distractor_object.clone(),
        ];

        let mut tokens = Vec::with_capacity(24);
        let place = |tokens: &mut Vec<String>, clause: &[String], head: usize| -> Span {
            let start = tokens.len();
            tokens.extend_from_slice(clause);
            Span::new(start, tokens.len(), start + head)
        };
        let (pre, target, dis);
        match slots.form % Self::NUM_FORMS {
            0 => {
                pre = place(&mut tokens, &pre_clause, 2);
                tokens.extend([s("so"), s("that")]);
                target = place(&mut tokens, &target_clause, 3);
                tokens.push(s("while"));
                dis = place(&mut tokens, &dis_clause, 2);
            }
            1 => {
                target = place(&mut tokens, &target_clause, 3);
                tokens.push(s("after"));
                pre = place(&mut tokens, &pre_clause, 2);
                tokens.push(s("while"));
                dis = place(&mut tokens, &dis_clause, 2);
            }
            _ => {
                dis = place(&mut tokens, &dis_clause, 2);
                tokens.push(s(","));
                pre = place(&mut tokens, &pre_clause, 2);
                tokens.push(s("so"));
                target = place(&mut tokens, &target_clause, 3);
            }
        }
        tokens.push(s("."));
        RenderedSentence {
            tokens,
            target,
            precondition: pre,
            distractor: dis,
        }
    }
}

/// Generates precondition records, re-ranker classification records
/// (`#pos` / `#neg`), and temporal pretraining records. A pure function of
/// the spec.
pub fn synth_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let grammar = SyntheticGrammar::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    let mut n = 0usize;

    for (ti, pres) in grammar.preconditions.iter().enumerate() {
        for pre in pres {
            for k in 0..spec.templates_per_pair {
                let slots =
                    grammar.sample_slots(k % SyntheticGrammar::NUM_FORMS, ti, pre, &mut rng);
                let r = SyntheticGrammar::render(&slots);
                let id = format!("syn-{n:06}");
                n += 1;
                let record = |id: String, pre: Span, label: Option<bool>| AnnotatedSentence {
                    id,
                    tokens: r.tokens.clone(),
                    target: r.target,
                    precondition: Some(pre),
                    label,
                    kind: RelationKind::Precondition,
                };
                out.push(record(id.clone(), r.precondition, None));
                out.push(record(format!("{id}#pos"), r.precondition, Some(true)));
                out.push(record(format!("{id}#neg"), r.distractor, Some(false)));
            }
        }
    }

    let mut m = 0usize;
    for (ti, pres) in grammar.preconditions.iter().enumerate() {
        let mut before: Vec<&String> = pres.iter().collect();
        before.extend(grammar.temporal.iter().take(2));
        for trig in before {
            for k in 0..spec.templates_per_pair {
                let slots =
                    grammar.sample_slots(k % SyntheticGrammar::NUM_FORMS, ti, trig, &mut rng);
                let r = SyntheticGrammar::render(&slots);
                out.push(AnnotatedSentence {
                    id: format!("tmp-{m:06}"),
                    tokens: r.tokens,
                    target: r.target,
                    precondition: Some(r.precondition),
                    label: None,
                    kind: RelationKind::TemporalBefore,
                });
                m += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assign_splits, build_infilling_instance, build_trigger_pair, Split};
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            num_target_types: 5,
            preconditions_per_target: 4,
            templates_per_pair: 3,
            vocab_size: 200,
            seed: 7,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = serde_json::to_string(&synth_corpus(&small()).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_corpus(&small()).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 8;
        let c = serde_json::to_string(&synth_corpus(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn each_target_has_exactly_its_preconditions() {
        let corpus = synth_corpus(&small()).unwrap();
        let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in corpus
            .iter()
            .filter(|r| r.kind == RelationKind::Precondition && r.label != Some(false))
        {
            seen.entry(r.target_trigger().to_owned())
                .or_default()
                .insert(r.precondition_trigger().unwrap().to_owned());
        }
        assert_eq!(seen.len(), 5);
        assert!(seen.values().all(|s| s.len() == 4));
    }

    #[test]
    fn every_record_is_valid_and_builds() {
        for r in synth_corpus(&small()).unwrap() {
            r.validate().unwrap();
            let inst = build_infilling_instance(&r, true).unwrap();
            inst.validate().unwrap();
            assert_eq!(inst.reconstruct(), r.tokens);
        }
    }

    #[test]
    fn negatives_pair_target_with_non_precondition() {
        let corpus = synth_corpus(&small()).unwrap();
        let g = SyntheticGrammar::new(&small()).unwrap();
        for r in corpus.iter().filter(|r| r.label == Some(false)) {
            let ti = g
                .targets
                .iter()
                .position(|t| t == r.target_trigger())
                .unwrap();
            assert!(!g.preconditions[ti]
                .iter()
                .any(|p| Some(p.as_str()) == r.precondition_trigger()));
        }
    }

    #[test]
    fn split_ratio_on_large_corpus() {
        let spec = SyntheticCorpusSpec {
            num_target_types: 10,
            preconditions_per_target: 4,
            templates_per_pair: 9,
            vocab_size: 300,
            seed: 3,
        };
        let corpus = synth_corpus(&spec).unwrap();
        assert!(corpus.len() >= 1000);
        let splits = assign_splits(&corpus);
        let train = splits.iter().filter(|s| **s == Split::Train).count() as f64;
        let frac = train / corpus.len() as f64;
        assert!((frac - 0.8).abs() <= 0.02, "train fraction {frac}");
    }

    #[test]
    fn vocab_too_small_is_infeasible() {
        let mut spec = small();
        spec.vocab_size = 40;
        assert!(matches!(
            synth_corpus(&spec),
            Err(CorpusError::InfeasibleSpec(_))
        ));
        spec.num_target_types = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rebuild_lost_window_five() {
        let slots = SentenceSlots {
            form: 0,
            target: "rebuild".into(),
            precondition: "lost".into(),
            distractor: "fled".into(),
            subject: "nation".into(),
            target_subject: "nation".into(),
            pre_object: "war".into(),
            target_object: "bridge".into(),
            distractor_subject: "army".into(),
            distractor_object: "city".into(),
            day: "monday".into(),
        };
        let r = SyntheticGrammar::render(&slots);
        let s = AnnotatedSentence {
            id: "x".into(),
            tokens: r.tokens.clone(),
            target: r.target,
            precondition: Some(r.precondition),
            label: None,
            kind: RelationKind::Precondition,
        };
        let pair = build_trigger_pair(&s, 5).unwrap();

        // Independent route: splice the blank in by hand and slice.
        let mut blanked: Vec<String> = vec!["[BLANK]".into()];
        blanked.extend(r.tokens[r.precondition.end..].iter().cloned());
        let t = blanked.iter().position(|w| w == "rebuild").unwrap();
        let expected = &blanked[t - 5..=t + 5];

        assert_eq!(pair.reduced_context.len(), 11);
        assert_eq!(pair.reduced_context, expected);
        assert_eq!(pair.precondition_trigger, "lost");
    }
}
