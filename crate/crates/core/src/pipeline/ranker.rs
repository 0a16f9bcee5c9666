//! Re-ranker: a logistic scorer over (target event, candidate event) pairs.
//!
//! Features, version 1, for a sentence with target trigger at `t` and
//! candidate trigger at `c`:
//!
//! 1. `logit((pos + 1) / (pos + neg + 2))`, the smoothed positive rate of the
//!    (target trigger, candidate trigger) word pair among training records,
//! 2. Jaccard overlap of the token sets within 3 positions of `t` and of `c`,
//!    triggers excluded,
//! 3. `|t - c| / len`.
//!
//! Features are standardized with training statistics and fitted by
//! full-batch gradient descent from zero weights, so training is
//! deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::candidate::Candidate;
use crate::corpus::{AnnotatedSentence, InfillingInstance};
use crate::lm::LmError;
use crate::scalar::Scalar;
use crate::vocab::{is_special_token, BLANK, EVENT_CLOSE, EVENT_OPEN, PRE_OPEN};

pub const FEATURE_VERSION: u32 = 1;
pub const RANKER_FORMAT_VERSION: u32 = 1;
const NUM_FEATURES: usize = 3;
const WINDOW: usize = 3;

/// Scores a candidate clause as a precondition of the instance's target.
pub trait Scorer<T: Scalar>: Send + Sync {
    /// Score in `[0, 1]`.
    fn score(&self, instance: &InfillingInstance, candidate: &Candidate<T>) -> T;
}

/// Gives every candidate the same score, leaving rank order untouched.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer<T>(pub T);

impl<T: Scalar> Scorer<T> for ConstantScorer<T> {
    fn score(&self, _: &InfillingInstance, _: &Candidate<T>) -> T {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig<T> {
    pub epochs: usize,
    pub learning_rate: T,
    pub l2: T,
}

impl<T: Scalar> Default for RankerConfig<T> {
    fn default() -> Self {
        RankerConfig {
            epochs: 400,
            learning_rate: T::from_f64_lossy(0.5),
            l2: T::from_f64_lossy(1e-4),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub pos: u32,
    pub neg: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel<T> {
    pub feature_version: u32,
    pub bias: T,
    pub weights: Vec<T>,
    pub feature_mean: Vec<T>,
    pub feature_scale: Vec<T>,
    /// Keyed by `"target candidate"`.
    pub pairs: BTreeMap<String, PairCounts>,
}

fn pair_key(target: &str, candidate: &str) -> String {
    format!("{target} {candidate}")
}

fn window_set(tokens: &[String], center: usize) -> BTreeSet<&str> {
    let lo = center.saturating_sub(WINDOW);
    let hi = (center + WINDOW + 1).min(tokens.len());
    (lo..hi)
        .filter(|&i| i != center)
        .map(|i| tokens[i].as_str())
        .collect()
}

/// Sentence with the candidate clause in the blank, markers removed, plus the
/// target and candidate trigger positions.
pub fn filled_sentence<T: Scalar>(
    instance: &InfillingInstance,
    candidate: &Candidate<T>,
) -> (Vec<String>, Option<usize>, Option<usize>) {
    let mut tokens = Vec::new();
    let (mut target, mut cand) = (None, None);
    let mut mark_target = false;
    for tok in &instance.without_control_code().input_tokens {
        match tok.as_str() {
            EVENT_OPEN => mark_target = true,
            EVENT_CLOSE => {}
            BLANK => {
                let mut mark = false;
                for w in &candidate.text {
                    if w == PRE_OPEN {
                        mark = cand.is_none();
                    } else if !is_special_token(w) {
                        if mark {
                            cand = Some(tokens.len());
                            mark = false;
                        }
                        tokens.push(w.clone());
                    }
                }
            }
            _ => {
                if mark_target {
                    target = Some(tokens.len());
                    mark_target = false;
                }
                tokens.push(tok.clone());
            }
        }
    }
    (tokens, target, cand)
}

impl<T: Scalar> RankerModel<T> {
    fn raw_features(&self, tokens: &[String], target: usize, cand: usize) -> [T; NUM_FEATURES] {
        let c = self
            .pairs
            .get(&pair_key(&tokens[target], &tokens[cand]))
            .copied()
            .unwrap_or_default();
        let rate = (f64::from(c.pos) + 1.0) / (f64::from(c.pos) + f64::from(c.neg) + 2.0);
        let a = window_set(tokens, target);
        let b = window_set(tokens, cand);
        let union = a.union(&b).count();
        let jaccard = if union == 0 {
            0.0
        } else {
            a.intersection(&b).count() as f64 / union as f64
        };
        let dist = target.abs_diff(cand) as f64 / tokens.len().max(1) as f64;
        [
            T::from_f64_lossy((rate / (1.0 - rate)).ln()),
            T::from_f64_lossy(jaccard),
            T::from_f64_lossy(dist),
        ]
    }

    fn standardized(&self, raw: [T; NUM_FEATURES]) -> [T; NUM_FEATURES] {
        let mut out = raw;
        for (i, x) in out.iter_mut().enumerate() {
            *x = (*x - self.feature_mean[i]) / self.feature_scale[i];
        }
        out
    }

    fn logistic(&self, x: [T; NUM_FEATURES]) -> T {
        let z = self.bias + x.iter().zip(&self.weights).map(|(a, w)| *a * *w).sum::<T>();
        T::one() / (T::one() + (-z).exp())
    }

    /// Score of the pair at token positions `target` and `cand` of `tokens`.
    pub fn score_tokens(&self, tokens: &[String], target: usize, cand: usize) -> T {
        self.logistic(self.standardized(self.raw_features(tokens, target, cand)))
    }

    pub fn score_sentence(&self, s: &AnnotatedSentence) -> Option<T> {
        let pre = s.precondition?;
        Some(self.score_tokens(&s.tokens, s.target.trigger, pre.trigger))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| LmError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let payload = serde_json::to_vec(self).map_err(|e| LmError::Format {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let manifest = serde_json::json!({
            "format_version": RANKER_FORMAT_VERSION,
            "kind": "ranker",
            "scalar": T::NAME,
            "feature_version": self.feature_version,
            "payload": "payload.json",
            "payload_sha256": hex::encode(Sha256::digest(&payload)),
        });
        let p = dir.join("payload.json");
        fs::write(&p, &payload).map_err(io(&p))?;
        let m = dir.join("manifest.json");
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&m, text).map_err(io(&m))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let m = dir.join("manifest.json");
        let format = |path: &Path, message: String| LmError::Format {
            path: path.to_path_buf(),
            message,
        };
        let bytes = fs::read(&m).map_err(|source| LmError::Io {
            path: m.clone(),
            source,
        })?;
        let manifest: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| format(&m, e.to_string()))?;
        let version = manifest["format_version"].as_u64().unwrap_or(0) as u32;
        if version != RANKER_FORMAT_VERSION {
            return Err(LmError::VersionMismatch {
                path: m,
                found: version,
                expected: RANKER_FORMAT_VERSION,
            }
            .into());
        }
        if manifest["kind"] != "ranker" || manifest["scalar"] != T::NAME {
            return Err(format(&m, format!("expected a {} ranker manifest", T::NAME)).into());
        }
        let p = dir.join("payload.json");
        let payload = fs::read(&p).map_err(|source| LmError::Io {
            path: p.clone(),
            source,
        })?;
        if manifest["payload_sha256"] != hex::encode(Sha256::digest(&payload)) {
            return Err(format(&p, "payload digest does not match manifest".into()).into());
        }
        let model: RankerModel<T> =
            serde_json::from_slice(&payload).map_err(|e| format(&p, e.to_string()))?;
        if model.feature_version != FEATURE_VERSION
            || model.weights.len() != NUM_FEATURES
            || model.feature_mean.len() != NUM_FEATURES
            || model.feature_scale.len() != NUM_FEATURES
        {
            return Err(format(&p, "unsupported feature layout".into()).into());
        }
        Ok(model)
    }
}

impl<T: Scalar> Scorer<T> for RankerModel<T> {
    /// Candidates without a locatable trigger score as an unseen pair at the
    /// blank position.
    fn score(&self, instance: &InfillingInstance, candidate: &Candidate<T>) -> T {
        let (tokens, target, cand) = filled_sentence(instance, candidate);
        let Some(target) = target else {
            return T::zero();
        };
        let cand = cand
            .or_else(|| {
                let t = candidate.trigger.as_deref()?;
                tokens.iter().position(|w| w == t)
            })
            .unwrap_or(target);
        if cand == target {
            return T::zero();
        }
        self.score_tokens(&tokens, target, cand)
    }
}

/// Fits the scorer on labelled records; unlabelled records are ignored.
pub fn train_ranker<T: Scalar>(
    records: &[AnnotatedSentence],
    config: &RankerConfig<T>,
) -> Result<RankerModel<T>, PipelineError> {
    let labelled: Vec<(&AnnotatedSentence, bool)> =
        records.iter().filter_map(|r| Some((r, r.label?))).collect();
    let npos = labelled.iter().filter(|(_, y)| *y).count();
    if npos == 0 || npos == labelled.len() {
        return Err(PipelineError::Training(format!(
            "ranker needs both labels, got {npos} positive of {}",
            labelled.len()
        )));
    }
    let mut pairs: BTreeMap<String, PairCounts> = BTreeMap::new();
    for (r, y) in &labelled {
        let pre = r
            .precondition_trigger()
            .expect("labelled records carry a span");
        let e = pairs.entry(pair_key(r.target_trigger(), pre)).or_default();
        if *y {
            e.pos += 1;
        } else {
            e.neg += 1;
        }
    }
    let mut model = RankerModel {
        feature_version: FEATURE_VERSION,
        bias: T::zero(),
        weights: vec![T::zero(); NUM_FEATURES],
        feature_mean: vec![T::zero(); NUM_FEATURES],
        feature_scale: vec![T::one(); NUM_FEATURES],
        pairs,
    };

    let raw: Vec<[T; NUM_FEATURES]> = labelled
        .iter()
        .map(|(r, _)| {
            let pre = r.precondition.expect("labelled records carry a span");
            model.raw_features(&r.tokens, r.target.trigger, pre.trigger)
        })
        .collect();
    let n = T::from_usize(raw.len()).expect("count fits a float");
    for i in 0..NUM_FEATURES {
        let mean = raw.iter().map(|x| x[i]).sum::<T>() / n;
        let var = raw.iter().map(|x| (x[i] - mean).powi(2)).sum::<T>() / n;
        model.feature_mean[i] = mean;
        model.feature_scale[i] = if var > T::zero() {
            var.sqrt()
        } else {
            T::one()
        };
    }
    let xs: Vec<[T; NUM_FEATURES]> = raw.iter().map(|x| model.standardized(*x)).collect();
    let ys: Vec<T> = labelled
        .iter()
        .map(|(_, y)| if *y { T::one() } else { T::zero() })
        .collect();

    for _ in 0..config.epochs {
        let mut gb = T::zero();
        let mut gw = [T::zero(); NUM_FEATURES];
        for (x, y) in xs.iter().zip(&ys) {
            let err = model.logistic(*x) - *y;
            gb += err;
            for i in 0..NUM_FEATURES {
                gw[i] += err * x[i];
            }
        }
        model.bias -= config.learning_rate * gb / n;
        for i in 0..NUM_FEATURES {
            let g = gw[i] / n + config.l2 * model.weights[i];
            model.weights[i] -= config.learning_rate * g;
        }
    }
    Ok(model)
}

/// Attaches scores and stable-sorts by descending score.
pub fn rerank<T, S>(
    scorer: &S,
    instance: &InfillingInstance,
    mut candidates: Vec<Candidate<T>>,
) -> Vec<Candidate<T>>
where
    T: Scalar,
    S: Scorer<T> + ?Sized,
{
    for c in &mut candidates {
        c.rank_score = Some(scorer.score(instance, c));
    }
    candidates.sort_by(|a, b| {
        b.rank_score
            .partial_cmp(&a.rank_score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    candidates
}

/// Precision, recall and F1 of `score >= 0.5` on labelled records.
pub fn evaluate_ranker<T: Scalar>(
    model: &RankerModel<T>,
    records: &[AnnotatedSentence],
) -> (f64, f64, f64) {
    let half = T::from_f64_lossy(0.5);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for r in records {
        let (Some(y), Some(s)) = (r.label, model.score_sentence(r)) else {
            continue;
        };
        match (s >= half, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fneg == 0 {
        0.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    let f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::Origin;
    use crate::corpus::{synth_corpus, SyntheticCorpusSpec};
    use proptest::prelude::*;

    fn corpus() -> Vec<AnnotatedSentence> {
        synth_corpus(&SyntheticCorpusSpec {
            num_target_types: 6,
            preconditions_per_target: 4,
            templates_per_pair: 4,
            vocab_size: 200,
            seed: 3,
        })
        .unwrap()
    }

    fn cand(score_tag: &str) -> Candidate<f64> {
        Candidate::new(
            Origin::Dip,
            Some(score_tag.into()),
            vec![score_tag.into()],
            0.0,
            true,
        )
    }

    struct Lookup;
    impl Scorer<f64> for Lookup {
        fn score(&self, _: &InfillingInstance, c: &Candidate<f64>) -> f64 {
            match c.text[0].as_str() {
                "c1" => 0.2,
                "c2" => 0.9,
                _ => 0.5,
            }
        }
    }

    fn inst() -> InfillingInstance {
        InfillingInstance {
            input_tokens: vec![
                "[BLANK]".into(),
                "<event>".into(),
                "go".into(),
                "</event>".into(),
            ],
            output_tokens: vec![],
        }
    }

    #[test]
    fn rerank_sorts_by_score() {
        let out = rerank(&Lookup, &inst(), vec![cand("c1"), cand("c2"), cand("c3")]);
        let order: Vec<_> = out.iter().map(|c| c.text[0].as_str()).collect();
        assert_eq!(order, vec!["c2", "c3", "c1"]);
        assert_eq!(out[0].rank_score, Some(0.9));
    }

    #[test]
    fn constant_scores_keep_order() {
        let input = vec![cand("b"), cand("a"), cand("c")];
        let out = rerank(&ConstantScorer(0.5), &inst(), input.clone());
        let texts: Vec<_> = out.iter().map(|c| c.text.clone()).collect();
        let before: Vec<_> = input.iter().map(|c| c.text.clone()).collect();
        assert_eq!(texts, before);
    }

    #[test]
    fn single_class_is_an_error() {
        let only_pos: Vec<_> = corpus()
            .into_iter()
            .filter(|r| r.label == Some(true))
            .collect();
        assert!(matches!(
            train_ranker::<f64>(&only_pos, &RankerConfig::default()),
            Err(PipelineError::Training(_))
        ));
    }

    #[test]
    fn separates_training_pairs() {
        let data = corpus();
        let m = train_ranker::<f64>(&data, &RankerConfig::default()).unwrap();
        let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0, 0);
        for r in &data {
            match (r.label, m.score_sentence(r)) {
                (Some(true), Some(s)) => {
                    pos += s;
                    np += 1
                }
                (Some(false), Some(s)) => {
                    neg += s;
                    nn += 1
                }
                _ => {}
            }
        }
        assert!(pos / np as f64 > neg / nn as f64);
        let (_, _, f1) = evaluate_ranker(&m, &data);
        assert!(f1 > 0.85, "{f1}");
    }

    #[test]
    fn filled_sentence_locates_triggers() {
        let c = Candidate::<f64>::new(
            Origin::Dip,
            Some("hired".into()),
            vec![
                "the".into(),
                "<pre>".into(),
                "hired".into(),
                "</pre>".into(),
                "staff".into(),
            ],
            0.0,
            true,
        );
        let (tokens, t, k) = filled_sentence(&inst().with_control_code("hired"), &c);
        assert_eq!(tokens, vec!["the", "hired", "staff", "go"]);
        assert_eq!((t, k), (Some(3), Some(1)));
    }

    #[test]
    fn persistence_round_trip() {
        let m = train_ranker::<f64>(
            &corpus(),
            &RankerConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(RankerModel::<f64>::load(dir.path()).unwrap(), m);
        let p = dir.path().join("payload.json");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() / 2);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            RankerModel::<f64>::load(dir.path()),
            Err(PipelineError::Lm(LmError::Format { .. }))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scores_are_probabilities(seed in 0u64..1000, words in prop::collection::vec("[a-z]{1,4}", 1..6)) {
            let m = train_ranker::<f64>(&corpus(), &RankerConfig { epochs: 10, ..Default::default() }).unwrap();
            let mut text = vec!["<pre>".to_string()];
            text.extend(words);
            let c = Candidate::new(Origin::Dip, None, text, 0.0, seed % 2 == 0);
            let s = m.score(&inst(), &c);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn rerank_is_a_permutation(scores in prop::collection::vec(0.0f64..1.0, 1..12)) {
            struct ByLogprob;
            impl Scorer<f64> for ByLogprob {
                fn score(&self, _: &InfillingInstance, c: &Candidate<f64>) -> f64 { c.lm_logprob }
            }
            let input: Vec<Candidate<f64>> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| Candidate::new(Origin::Dip, None, vec![i.to_string()], *s, true))
                .collect();
            let out = rerank(&ByLogprob, &inst(), input.clone());
            let mut a: Vec<_> = input.iter().map(|c| c.text[0].clone()).collect();
            let mut b: Vec<_> = out.iter().map(|c| c.text[0].clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            prop_assert!(out.windows(2).all(|w| w[0].rank_score >= w[1].rank_score));
        }
    }
}
