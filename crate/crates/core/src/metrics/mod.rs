//! Diversity metrics over candidate sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{cosine, Embedder};
use crate::scalar::Scalar;
use crate::vocab::strip_special;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("ragged candidate counts: {0}")]
    Ragged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig<T> {
    pub max_n: usize,
    /// Floor for zero n-gram precisions.
    pub epsilon: T,
}

impl<T: Scalar> Default for BleuConfig<T> {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            epsilon: T::from_f64_lossy(1e-9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfBleuMode {
    /// Mean of BLEU over ordered pairs.
    #[default]
    Pairwise,
    /// Each sentence against all others as one multi-reference set.
    VsRest,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    out
}

/// BLEU of `hypothesis` against one or more references. Clipping uses the
/// per-n-gram maximum over references and the brevity penalty uses the
/// reference length closest to the hypothesis (shorter on ties). An empty
/// hypothesis scores 0.
pub fn bleu_multi<T: Scalar, S: AsRef<str>>(
    hypothesis: &[S],
    references: &[&[S]],
    config: &BleuConfig<T>,
) -> Result<T, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::Argument(
            "BLEU needs at least one reference".into(),
        ));
    }
    if config.max_n == 0 {
        return Err(MetricsError::Argument("max_n must be at least 1".into()));
    }
    if hypothesis.is_empty() {
        return Ok(T::zero());
    }
    let effective = config.max_n.min(hypothesis.len());
    let weight = T::one() / T::from_usize(effective).expect("small count");
    let mut log_sum = T::zero();
    for n in 1..=effective {
        let hyp = ngram_counts(hypothesis, n);
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = hyp
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = hypothesis.len() + 1 - n;
        let p = T::from_usize(clipped).expect("count") / T::from_usize(total).expect("count");
        log_sum += weight * p.max(config.epsilon).ln();
    }
    let h = hypothesis.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(h), len))
        .expect("non-empty references");
    let bp_log =
        (T::one() - T::from_usize(r).expect("len") / T::from_usize(h).expect("len")).min(T::zero());
    Ok((log_sum + bp_log).exp())
}

/// Sentence BLEU with clipped precisions up to `min(max_n, |hypothesis|)`.
pub fn bleu<T: Scalar, S: AsRef<str>>(
    hypothesis: &[S],
    reference: &[S],
    config: &BleuConfig<T>,
) -> Result<T, MetricsError> {
    bleu_multi(hypothesis, &[reference], config)
}

fn need_two(n: usize) -> Result<(), MetricsError> {
    if n < 2 {
        return Err(MetricsError::Undefined(format!(
            "need at least 2 candidates, got {n}"
        )));
    }
    Ok(())
}

/// Self-BLEU of a candidate set.
pub fn self_bleu<T: Scalar, S: AsRef<str>>(
    candidates: &[Vec<S>],
    config: &BleuConfig<T>,
    mode: SelfBleuMode,
) -> Result<T, MetricsError> {
    need_two(candidates.len())?;
    let mut total = T::zero();
    let mut count = 0usize;
    for (i, hyp) in candidates.iter().enumerate() {
        match mode {
            SelfBleuMode::Pairwise => {
                for (j, r) in candidates.iter().enumerate() {
                    if i != j {
                        total += bleu(hyp, r, config)?;
                        count += 1;
                    }
                }
            }
            SelfBleuMode::VsRest => {
                let rest: Vec<&[S]> = candidates
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, r)| r.as_slice())
                    .collect();
                total += bleu_multi(hyp, &rest, config)?;
                count += 1;
            }
        }
    }
    Ok(total / T::from_usize(count).expect("count"))
}

/// Mean of `scorer(a, b)` over ordered pairs of distinct positions.
pub fn self_similarity<T, C, F>(candidates: &[C], mut scorer: F) -> Result<T, MetricsError>
where
    T: Scalar,
    F: FnMut(&C, &C) -> T,
{
    need_two(candidates.len())?;
    let mut total = T::zero();
    let mut count = 0usize;
    for (i, a) in candidates.iter().enumerate() {
        for (j, b) in candidates.iter().enumerate() {
            if i != j {
                total += scorer(a, b);
                count += 1;
            }
        }
    }
    Ok(total / T::from_usize(count).expect("count"))
}

/// Cosine of embedder vectors, the reference pair scorer.
pub fn embedding_similarity<T, E>(
    embedder: &E,
    candidates: &[Vec<String>],
) -> Result<T, MetricsError>
where
    T: Scalar,
    E: Embedder<T> + ?Sized,
{
    let vectors: Vec<Vec<T>> = candidates.iter().map(|c| embedder.embed(c)).collect();
    self_similarity(&vectors, |a, b| cosine(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig<T> {
    pub bleu: BleuConfig<T>,
    pub self_bleu_mode: SelfBleuMode,
    pub allow_ragged: bool,
}

impl<T: Scalar> Default for ReportConfig<T> {
    fn default() -> Self {
        ReportConfig {
            bleu: BleuConfig::default(),
            self_bleu_mode: SelfBleuMode::Pairwise,
            allow_ragged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScores<T> {
    pub id: String,
    pub self_bleu: T,
    pub self_sim: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores<T> {
    pub self_bleu: T,
    pub self_sim: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport<T> {
    pub per_target: Vec<TargetScores<T>>,
    pub mean: MeanScores<T>,
    pub num_targets: usize,
    /// `None` when counts differ across targets.
    pub num_candidates_per_target: Option<usize>,
    pub config: ReportConfig<T>,
}

/// Per-target Self-BLEU and self-similarity plus corpus means. Special tokens
/// are stripped first; targets with fewer than two candidates are skipped
/// when ragged input is allowed.
pub fn diversity_report<T, E>(
    sets: &[(String, Vec<Vec<String>>)],
    embedder: &E,
    config: &ReportConfig<T>,
) -> Result<DiversityReport<T>, MetricsError>
where
    T: Scalar,
    E: Embedder<T> + ?Sized,
{
    let sizes: BTreeMap<usize, usize> = sets.iter().fold(BTreeMap::new(), |mut m, (_, c)| {
        *m.entry(c.len()).or_insert(0) += 1;
        m
    });
    if sizes.len() > 1 && !config.allow_ragged {
        let desc: Vec<String> = sizes
            .iter()
            .map(|(k, v)| format!("{v} sets of {k}"))
            .collect();
        return Err(MetricsError::Ragged(desc.join(", ")));
    }
    let mut per_target = Vec::with_capacity(sets.len());
    for (id, cands) in sets {
        let clean: Vec<Vec<String>> = cands.iter().map(|c| strip_special(c)).collect();
        if clean.len() < 2 && config.allow_ragged {
            continue;
        }
        per_target.push(TargetScores {
            id: id.clone(),
            self_bleu: self_bleu(&clean, &config.bleu, config.self_bleu_mode)?,
            self_sim: embedding_similarity(embedder, &clean)?,
        });
    }
    if per_target.is_empty() {
        return Err(MetricsError::Undefined(
            "no target has two or more candidates".into(),
        ));
    }
    let n = T::from_usize(per_target.len()).expect("count");
    let mean = MeanScores {
        self_bleu: per_target.iter().map(|t| t.self_bleu).sum::<T>() / n,
        self_sim: per_target.iter().map(|t| t.self_sim).sum::<T>() / n,
    };
    Ok(DiversityReport {
        num_targets: per_target.len(),
        num_candidates_per_target: (sizes.len() == 1)
            .then(|| *sizes.keys().next().expect("one size")),
        per_target,
        mean,
        config: *config,
    })
}

/// Markdown comparison table, one row per labelled report.
pub fn markdown_table<T: Scalar>(rows: &[(String, &DiversityReport<T>)]) -> String {
    let mut out =
        String::from("| Model | Self-BLEU | Self-Sim | Targets |\n|---|---:|---:|---:|\n");
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "| {label} | {:.3} | {:.3} | {} |",
            r.mean.self_bleu.to_f64_lossy(),
            r.mean.self_sim.to_f64_lossy(),
            r.num_targets
        );
    }
    out
}
