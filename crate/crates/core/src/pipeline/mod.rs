//! Sampler, generator, re-ranker and similarity filter, composed.
//!
//! [`run_dip`] samples precondition triggers from a reduced target context,
//! generates one clause per trigger with a control-code generator, re-ranks
//! the clauses and walks the ranking to drop near-duplicates.
//! [`run_rps_plus_post`] applies the same post-processing to clauses drawn by
//! repetition-penalized sampling; [`run_beam`] is the plain beam baseline.

mod filter;
mod generate;
mod ranker;
mod sampler;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{reduced_context, CorpusError, InfillingInstance};
use crate::decode::{beam_search, rps_generate, DecodeConfig, DecodeError};
use crate::lm::{LmError, SequenceModel};
use crate::scalar::Scalar;

pub use crate::candidate::{Candidate, Origin};
pub use filter::{
    cosine, filter_by_similarity, redundancy_filter, CountEmbedder, Embedder, FilterStats,
    Filtered, ThresholdRule,
};
pub use generate::{generate_candidate, GenerationMode};
pub use ranker::{
    evaluate_ranker, filled_sentence, rerank, train_ranker, ConstantScorer, PairCounts,
    RankerConfig, RankerModel, Scorer, FEATURE_VERSION, RANKER_FORMAT_VERSION,
};
pub use sampler::{sample_triggers, SamplerConfig, TriggerSample};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
}

/// Post-processing shared by DiP and RPS+Post-proc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostConfig<T> {
    pub threshold: ThresholdRule<T>,
    pub top_k: usize,
}

impl<T> Default for PostConfig<T> {
    fn default() -> Self {
        PostConfig {
            threshold: ThresholdRule::MeanPlusStd,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipConfig<T> {
    pub sampler: SamplerConfig,
    pub decode: DecodeConfig<T>,
    pub mode: GenerationMode,
    pub post: PostConfig<T>,
}

impl<T: Scalar> Default for DipConfig<T> {
    fn default() -> Self {
        DipConfig {
            sampler: SamplerConfig::default(),
            decode: DecodeConfig::default(),
            mode: GenerationMode::Nucleus,
            post: PostConfig::default(),
        }
    }
}

/// One strategy's output for one target, with audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput<T> {
    /// Final top-k clauses, best first.
    pub selected: Vec<Candidate<T>>,
    /// Sampled triggers, most probable first. Empty for non-DiP strategies.
    pub triggers: Vec<String>,
    /// Ranked list the filter walked, with a flag for membership in
    /// `selected`.
    pub ranked: Vec<(Candidate<T>, bool)>,
    pub stats: Option<FilterStats<T>>,
    pub warnings: Vec<String>,
}

fn post_process<T, S, E>(
    instance: &InfillingInstance,
    candidates: Vec<Candidate<T>>,
    scorer: &S,
    embedder: &E,
    post: &PostConfig<T>,
    warnings: &mut Vec<String>,
) -> (
    Vec<Candidate<T>>,
    Vec<(Candidate<T>, bool)>,
    Option<FilterStats<T>>,
)
where
    T: Scalar,
    S: Scorer<T> + ?Sized,
    E: Embedder<T> + ?Sized,
{
    let total = candidates.len();
    let wellformed: Vec<Candidate<T>> = candidates
        .into_iter()
        .filter(|c| !c.is_malformed())
        .collect();
    if wellformed.len() < total {
        warnings.push(format!(
            "dropped {} malformed candidates",
            total - wellformed.len()
        ));
    }
    if wellformed.is_empty() {
        warnings.push("no candidate survived generation".into());
        return (Vec::new(), Vec::new(), None);
    }
    let ranked = rerank(scorer, instance, wellformed);
    let filtered = redundancy_filter(ranked.clone(), embedder, post.threshold, post.top_k);
    let mut flags = vec![false; ranked.len()];
    for &i in &filtered.selected_positions {
        flags[i] = true;
    }
    let audit = ranked.into_iter().zip(flags).collect();
    (filtered.selected, audit, filtered.stats)
}

/// Models used by [`run_dip`].
pub struct DipModels<'a, T: Scalar> {
    pub sampler: &'a dyn SequenceModel<T>,
    pub generator: &'a dyn SequenceModel<T>,
    pub scorer: &'a dyn Scorer<T>,
    pub embedder: &'a dyn Embedder<T>,
}

/// Sampler, generator and post-processor for one inference instance.
pub fn run_dip<T, R>(
    models: &DipModels<'_, T>,
    instance: &InfillingInstance,
    config: &DipConfig<T>,
    rng: &mut R,
) -> Result<PipelineOutput<T>, PipelineError>
where
    T: Scalar,
    R: Rng + ?Sized,
{
    let instance = instance.for_inference();
    let context = reduced_context(&instance, config.sampler.window)?;
    let sample = sample_triggers(models.sampler, &context, &config.sampler)?;
    let mut warnings = Vec::new();
    if sample.shortfall {
        warnings.push(format!(
            "sampler returned {} of {} requested triggers",
            sample.triggers.len(),
            config.sampler.num_triggers
        ));
    }
    let mut candidates = Vec::with_capacity(sample.triggers.len());
    for (trigger, _) in &sample.triggers {
        candidates.push(generate_candidate(
            models.generator,
            &instance,
            trigger,
            &config.decode,
            config.mode,
            rng,
        )?);
    }
    let (selected, ranked, stats) = post_process(
        &instance,
        candidates,
        models.scorer,
        models.embedder,
        &config.post,
        &mut warnings,
    );
    Ok(PipelineOutput {
        selected,
        triggers: sample.words(),
        ranked,
        stats,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpsConfig<T> {
    pub decode: DecodeConfig<T>,
    pub num_iterations: usize,
}

impl<T: Scalar> Default for RpsConfig<T> {
    fn default() -> Self {
        RpsConfig {
            decode: DecodeConfig::default(),
            num_iterations: 10,
        }
    }
}

/// Plain repetition-penalized sampling; every candidate is kept.
pub fn run_rps<T, M, R>(
    infill: &M,
    instance: &InfillingInstance,
    config: &RpsConfig<T>,
    rng: &mut R,
) -> Result<PipelineOutput<T>, PipelineError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let cands = rps_generate(
        infill,
        &instance.for_inference(),
        config.num_iterations,
        &config.decode,
        rng,
    )?;
    let warnings = match cands.iter().filter(|c| c.is_malformed()).count() {
        0 => Vec::new(),
        n => vec![format!("{n} malformed candidates")],
    };
    Ok(PipelineOutput {
        ranked: cands.iter().cloned().map(|c| (c, true)).collect(),
        selected: cands,
        triggers: Vec::new(),
        stats: None,
        warnings,
    })
}

/// Repetition-penalized sampling followed by the DiP post-processor.
pub fn run_rps_plus_post<T, R>(
    infill: &dyn SequenceModel<T>,
    scorer: &dyn Scorer<T>,
    embedder: &dyn Embedder<T>,
    instance: &InfillingInstance,
    config: &RpsConfig<T>,
    post: &PostConfig<T>,
    rng: &mut R,
) -> Result<PipelineOutput<T>, PipelineError>
where
    T: Scalar,
    R: Rng + ?Sized,
{
    let instance = instance.for_inference();
    let cands = rps_generate(
        infill,
        &instance,
        config.num_iterations,
        &config.decode,
        rng,
    )?;
    let mut warnings = Vec::new();
    let (selected, ranked, stats) =
        post_process(&instance, cands, scorer, embedder, post, &mut warnings);
    Ok(PipelineOutput {
        selected,
        triggers: Vec::new(),
        ranked,
        stats,
        warnings,
    })
}

/// Top `beam_width` beam hypotheses on the plain infilling model.
pub fn run_beam<T, M>(
    infill: &M,
    instance: &InfillingInstance,
    config: &DecodeConfig<T>,
) -> Result<PipelineOutput<T>, PipelineError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
{
    let vocab = infill.vocab();
    let prompt = vocab
        .encode(&instance.for_inference().prompt())
        .map_err(LmError::from)?;
    let mut selected = Vec::new();
    for h in beam_search(infill, &prompt, config)? {
        let text = vocab.decode(&h.tokens).map_err(LmError::from)?;
        let trigger = crate::corpus::marked_trigger(&text).map(str::to_owned);
        selected.push(Candidate::new(
            Origin::Beam,
            trigger,
            text,
            h.logprob,
            h.ended,
        ));
    }
    Ok(PipelineOutput {
        ranked: selected.iter().cloned().map(|c| (c, true)).collect(),
        selected,
        triggers: Vec::new(),
        stats: None,
        warnings: Vec::new(),
    })
}

/// Strategy names used in run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Beam,
    Rps,
    RpsPost,
    Dip,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Beam,
        Strategy::Rps,
        Strategy::RpsPost,
        Strategy::Dip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Beam => "beam",
            Strategy::Rps => "rps",
            Strategy::RpsPost => "rps_post",
            Strategy::Dip => "dip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub trigger: String,
    pub text: Vec<String>,
    pub lm_logprob: f64,
    pub rank_score: Option<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub mu: f64,
    pub sigma: f64,
    /// `null` when filtering is disabled.
    pub tau: Option<f64>,
    pub dropped: usize,
}

/// One line of a run-record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub strategy: Strategy,
    /// Sampler window, for DiP runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub triggers: Vec<String>,
    pub candidates: Vec<CandidateRecord>,
    pub filter: Option<FilterRecord>,
}

impl RunRecord {
    pub fn from_output<T: Scalar>(
        id: &str,
        strategy: Strategy,
        window: Option<usize>,
        out: &PipelineOutput<T>,
    ) -> Self {
        let candidates = out
            .ranked
            .iter()
            .map(|(c, kept)| CandidateRecord {
                trigger: c.trigger.clone().unwrap_or_default(),
                text: c.text.clone(),
                lm_logprob: c.lm_logprob.to_f64_lossy(),
                rank_score: c.rank_score.map(Scalar::to_f64_lossy),
                kept: *kept,
            })
            .collect();
        let filter = out.stats.map(|s| FilterRecord {
            mu: s.mu.to_f64_lossy(),
            sigma: s.sigma.to_f64_lossy(),
            tau: Some(s.tau.to_f64_lossy()).filter(|t| t.is_finite()),
            dropped: s.dropped,
        });
        RunRecord {
            id: id.to_owned(),
            strategy,
            window,
            triggers: out.triggers.clone(),
            candidates,
            filter,
        }
    }

    /// Kept clauses in output order.
    pub fn kept_texts(&self) -> Vec<&[String]> {
        self.candidates
            .iter()
            .filter(|c| c.kept)
            .map(|c| c.text.as_slice())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::rng_for;
    use crate::lm::{ExplicitTableModel, TableBuilder};

    fn instance() -> InfillingInstance {
        InfillingInstance {
            input_tokens: vec![
                "[BLANK]".into(),
                "so".into(),
                "<event>".into(),
                "go".into(),
                "</event>".into(),
            ],
            output_tokens: vec![],
        }
    }

    fn sampler() -> ExplicitTableModel<f64> {
        TableBuilder::new(1)
            .entry(&["<sep>"], &[("hired", 0.5), ("used", 0.3), ("asked", 0.2)])
            .entry(&["go"], &[("<sep>", 1.0)])
            .build()
            .unwrap()
    }

    /// Copies the control-code trigger, then emits one of two objects.
    fn generator() -> ExplicitTableModel<f64> {
        let mut b = TableBuilder::new(3)
            .entry(&["<E>", "hired", "<sep>"], &[("<pre>", 1.0)])
            .entry(&["<E>", "used", "<sep>"], &[("<pre>", 1.0)])
            .entry(&["<E>", "asked", "<sep>"], &[("<pre>", 1.0)])
            .entry(&["[BLANK]", "so", "go"], &[("<eos>", 1.0)]);
        for t in ["hired", "used", "asked"] {
            b = b
                .entry(&[t, "<sep>", "<pre>"], &[(t, 1.0)])
                .entry(&["<sep>", "<pre>", t], &[("</pre>", 1.0)])
                .entry(&["<pre>", t, "</pre>"], &[("staff", 0.5), ("money", 0.5)])
                .entry(&[t, "</pre>", "staff"], &[("<eos>", 1.0)])
                .entry(&[t, "</pre>", "money"], &[("<eos>", 1.0)]);
        }
        b.build().unwrap()
    }

    struct Same;
    impl Embedder<f64> for Same {
        fn embed(&self, _: &[String]) -> Vec<f64> {
            vec![1.0, 0.0]
        }
    }

    #[test]
    fn identity_post_processing_is_transparent() {
        let (s, g) = (sampler(), generator());
        let models = DipModels {
            sampler: &s,
            generator: &g,
            scorer: &ConstantScorer(0.5),
            embedder: &Same,
        };
        let config = DipConfig {
            post: PostConfig {
                threshold: ThresholdRule::Disabled,
                top_k: 10,
            },
            ..DipConfig::default()
        };
        let out = run_dip(&models, &instance(), &config, &mut rng_for(1, "dip")).unwrap();
        assert_eq!(out.triggers, vec!["hired", "used", "asked"]);

        let mut rng = rng_for(1, "dip");
        let plain: Vec<Candidate<f64>> = out
            .triggers
            .iter()
            .map(|t| {
                generate_candidate(&g, &instance(), t, &config.decode, config.mode, &mut rng)
                    .unwrap()
            })
            .collect();
        let got: Vec<_> = out
            .selected
            .iter()
            .map(|c| (c.trigger.clone(), c.text.clone()))
            .collect();
        let want: Vec<_> = plain
            .iter()
            .map(|c| (c.trigger.clone(), c.text.clone()))
            .collect();
        assert_eq!(got, want);
        assert!(out.selected.iter().all(|c| c.trigger_included()));
    }

    #[test]
    fn identical_embeddings_keep_only_the_top() {
        let (s, g) = (sampler(), generator());
        let models = DipModels {
            sampler: &s,
            generator: &g,
            scorer: &ConstantScorer(0.5),
            embedder: &Same,
        };
        let out = run_dip(
            &models,
            &instance(),
            &DipConfig::default(),
            &mut rng_for(1, "dip"),
        )
        .unwrap();
        assert_eq!(out.selected.len(), 1);
        let stats = out.stats.unwrap();
        assert_eq!(stats.dropped, 2);
        assert_eq!(out.ranked.iter().filter(|(_, k)| *k).count(), 1);
        let rec = RunRecord::from_output("x", Strategy::Dip, Some(0), &out);
        assert_eq!(rec.kept_texts().len(), 1);
        assert_eq!(rec.filter.unwrap().tau, Some(1.0));
    }

    #[test]
    fn record_schema() {
        let rec = RunRecord {
            id: "syn-000001".into(),
            strategy: Strategy::RpsPost,
            window: None,
            triggers: vec![],
            candidates: vec![CandidateRecord {
                trigger: "hired".into(),
                text: vec!["<pre>".into(), "hired".into(), "</pre>".into()],
                lm_logprob: -0.5,
                rank_score: None,
                kept: true,
            }],
            filter: None,
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            s,
            r#"{"id":"syn-000001","strategy":"rps_post","triggers":[],"candidates":[{"trigger":"hired","text":["<pre>","hired","</pre>"],"lm_logprob":-0.5,"rank_score":null,"kept":true}],"filter":null}"#
        );
        assert_eq!(serde_json::from_str::<RunRecord>(&s).unwrap(), rec);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.name()), Some(s));
        }
    }
}
