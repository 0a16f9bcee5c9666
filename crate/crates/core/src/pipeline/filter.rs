use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::candidate::Candidate;
use crate::lm::NGramModel;
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocab};

/// Maps a token sequence (special tokens already removed) to a vector.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Vec<T>;
}

/// Token vectors built from an n-gram model's bigram counts: the
/// L2-normalized successor-count row concatenated with the L2-normalized
/// predecessor-count row. A sequence embeds as the mean of its known tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CountEmbedder<T> {
    vocab: Vocab,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> CountEmbedder<T> {
    pub fn from_ngram(model: &NGramModel<T>) -> Result<Self, PipelineError> {
        let bigrams = model.counts().get(1).ok_or_else(|| {
            PipelineError::Config("embedder needs a model of order 2 or more".into())
        })?;
        let vocab = crate::lm::SequenceModel::<T>::vocab(model).clone();
        let v = vocab.len();
        let mut next = vec![vec![T::zero(); v]; v];
        let mut prev = vec![vec![T::zero(); v]; v];
        for (ctx, cc) in bigrams {
            let a = ctx[0].index();
            for (b, c) in &cc.next {
                next[a][b.index()] += *c;
                prev[b.index()][a] += *c;
            }
        }
        let rows = next
            .into_iter()
            .zip(prev)
            .map(|(n, p)| {
                let mut row = unit(n);
                row.extend(unit(p));
                row
            })
            .collect();
        Ok(CountEmbedder { vocab, rows })
    }

    pub fn dim(&self) -> usize {
        2 * self.vocab.len()
    }
}

fn unit<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let norm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if norm > T::zero() {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

impl<T: Scalar> Embedder<T> for CountEmbedder<T> {
    fn embed(&self, tokens: &[String]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        let ids: Vec<TokenId> = tokens
            .iter()
            .filter_map(|t| self.vocab.id(t).ok())
            .collect();
        if ids.is_empty() {
            return out;
        }
        for id in &ids {
            for (o, x) in out.iter_mut().zip(&self.rows[id.index()]) {
                *o += *x;
            }
        }
        let n = T::from_usize(ids.len()).expect("count fits a float");
        for o in &mut out {
            *o /= n;
        }
        out
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
    let na = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let nb = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        (dot / (na * nb)).min(T::one()).max(-T::one())
    }
}

/// How the keep threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule<T> {
    /// Mean plus population standard deviation of the pairwise similarities.
    MeanPlusStd,
    Fixed(T),
    /// Keep everything.
    Disabled,
}

impl<T> Default for ThresholdRule<T> {
    fn default() -> Self {
        ThresholdRule::MeanPlusStd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStats<T> {
    pub mu: T,
    pub sigma: T,
    pub tau: T,
    pub dropped: usize,
}

/// Greedy walk over a ranked list given its similarity matrix. Returns the
/// kept indices, in order, and the statistics; `None` for fewer than two
/// items, which are all kept.
pub fn filter_by_similarity<T: Scalar>(
    sims: &[Vec<T>],
    rule: ThresholdRule<T>,
) -> (Vec<usize>, Option<FilterStats<T>>) {
    let n = sims.len();
    if n < 2 {
        return ((0..n).collect(), None);
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(sims[i][j]);
        }
    }
    // Moments of the shifted values, so a constant list gives sigma = 0 exactly.
    let m = T::from_usize(pairs.len()).expect("count fits a float");
    let shift = pairs[0];
    let d_mean = pairs.iter().map(|s| *s - shift).sum::<T>() / m;
    let mu = shift + d_mean;
    let sigma = (pairs
        .iter()
        .map(|s| (*s - shift - d_mean).powi(2))
        .sum::<T>()
        / m)
        .sqrt();
    let tau = match rule {
        ThresholdRule::MeanPlusStd => mu + sigma,
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::Disabled => T::infinity(),
    };
    let mut kept = vec![0];
    for i in 1..n {
        let max = kept
            .iter()
            .map(|&k| sims[i][k])
            .fold(T::neg_infinity(), T::max);
        if max < tau {
            kept.push(i);
        }
    }
    let dropped = n - kept.len();
    (
        kept,
        Some(FilterStats {
            mu,
            sigma,
            tau,
            dropped,
        }),
    )
}

/// Output of the redundancy filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered<T> {
    /// Top survivors, in rank order.
    pub selected: Vec<Candidate<T>>,
    /// Input positions of `selected`.
    pub selected_positions: Vec<usize>,
    pub stats: Option<FilterStats<T>>,
}

/// Embeds each ranked candidate, drops those too similar to a higher-ranked
/// survivor, and returns the first `top_k` survivors.
pub fn redundancy_filter<T, E>(
    mut ranked: Vec<Candidate<T>>,
    embedder: &E,
    rule: ThresholdRule<T>,
    top_k: usize,
) -> Filtered<T>
where
    T: Scalar,
    E: Embedder<T> + ?Sized,
{
    for c in &mut ranked {
        c.embedding = Some(embedder.embed(&c.clean_text()));
    }
    let n = ranked.len();
    let mut sims = vec![vec![T::one(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine(
                ranked[i].embedding.as_deref().unwrap_or(&[]),
                ranked[j].embedding.as_deref().unwrap_or(&[]),
            );
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    let (mut kept, stats) = filter_by_similarity(&sims, rule);
    kept.truncate(top_k);
    let mut slots: BTreeMap<usize, Candidate<T>> = ranked.into_iter().enumerate().collect();
    let selected = kept
        .iter()
        .map(|i| slots.remove(i).expect("index in range"))
        .collect();
    Filtered {
        selected,
        selected_positions: kept,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::Origin;
    use crate::lm::{train_ngram, NGramConfig};
    use proptest::prelude::*;

    fn matrix(n: usize, upper: &[((usize, usize), f64)]) -> Vec<Vec<f64>> {
        let mut m = vec![vec![1.0; n]; n];
        for &((i, j), s) in upper {
            m[i][j] = s;
            m[j][i] = s;
        }
        m
    }

    #[test]
    fn worked_example() {
        let sims = matrix(
            4,
            &[
                ((0, 1), 0.9),
                ((0, 2), 0.2),
                ((0, 3), 0.3),
                ((1, 2), 0.25),
                ((1, 3), 0.35),
                ((2, 3), 0.85),
            ],
        );
        let (kept, stats) = filter_by_similarity(&sims, ThresholdRule::MeanPlusStd);
        let stats = stats.unwrap();
        // Independent evaluation of the population moments.
        let xs = [0.9, 0.2, 0.3, 0.25, 0.35, 0.85f64];
        let mu = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / 6.0;
        assert!((stats.mu - mu).abs() < 1e-12 && (stats.mu - 0.475).abs() < 1e-12);
        assert!((stats.sigma - var.sqrt()).abs() < 1e-12);
        assert!((stats.sigma - 0.28687).abs() < 1e-5);
        assert!((stats.tau - 0.76187).abs() < 1e-5);
        assert_eq!(stats.tau, stats.mu + stats.sigma);
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(stats.dropped, 2);
    }

    #[test]
    fn duplicates_collapse_to_first() {
        let sims = vec![vec![1.0f64; 5]; 5];
        let (kept, stats) = filter_by_similarity(&sims, ThresholdRule::MeanPlusStd);
        assert_eq!(kept, vec![0]);
        assert_eq!(stats.unwrap().tau, 1.0);
    }

    #[test]
    fn constant_similarity_keeps_only_first() {
        let mut sims = vec![vec![0.4f64; 4]; 4];
        for (i, row) in sims.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let (kept, stats) = filter_by_similarity(&sims, ThresholdRule::MeanPlusStd);
        assert_eq!(kept, vec![0]);
        assert_eq!(stats.unwrap().sigma, 0.0);
    }

    #[test]
    fn short_lists_pass_through() {
        let (kept, stats) = filter_by_similarity::<f64>(&[vec![1.0]], ThresholdRule::MeanPlusStd);
        assert_eq!(kept, vec![0]);
        assert!(stats.is_none());
    }

    #[test]
    fn disabled_rule_keeps_all() {
        let sims = vec![vec![1.0f64; 3]; 3];
        let (kept, stats) = filter_by_similarity(&sims, ThresholdRule::Disabled);
        assert_eq!(kept, vec![0, 1, 2]);
        assert_eq!(stats.unwrap().dropped, 0);
    }

    #[test]
    fn cosine_edges() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[0.0f64, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[2.0f64, 1.0], &[4.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    fn toy_embedder() -> CountEmbedder<f64> {
        let seqs: Vec<Vec<&str>> = vec![
            vec!["the", "city", "lost", "money"],
            vec!["the", "board", "took", "money"],
            vec!["a", "team", "won", "games"],
        ];
        let vocab = crate::vocab::Vocab::from_sequences(seqs.iter().map(|s| s.as_slice()));
        let m = train_ngram::<f64, _>(
            vocab,
            &[],
            &seqs,
            NGramConfig {
                order: 2,
                ..Default::default()
            },
        )
        .unwrap();
        CountEmbedder::from_ngram(&m).unwrap()
    }

    #[test]
    fn embedder_rows_and_duplicates() {
        let e = toy_embedder();
        let a = e.embed(&["the".into(), "city".into()]);
        assert_eq!(a.len(), e.dim());
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        assert!(e.embed(&["unknown".into()]).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn filter_removes_planted_duplicate() {
        let e = toy_embedder();
        let mk = |w: &[&str]| {
            Candidate::<f64>::new(
                Origin::Rps,
                None,
                w.iter().map(|s| s.to_string()).collect(),
                0.0,
                true,
            )
        };
        let ranked = vec![
            mk(&["the", "city", "lost", "money"]),
            mk(&["the", "city", "lost", "money"]),
            mk(&["a", "team", "won", "games"]),
        ];
        let out = redundancy_filter(ranked, &e, ThresholdRule::MeanPlusStd, 10);
        assert_eq!(out.selected_positions, vec![0, 2]);
        assert!(out.selected.iter().all(|c| c.embedding.is_some()));
    }

    fn sim_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..9).prop_flat_map(|n| {
            prop::collection::vec(-1.0f64..=1.0, n * (n - 1) / 2).prop_map(move |vals| {
                let mut m = vec![vec![1.0; n]; n];
                let mut it = vals.into_iter();
                for i in 0..n {
                    for j in i + 1..n {
                        let v = it.next().unwrap();
                        m[i][j] = v;
                        m[j][i] = v;
                    }
                }
                m
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn walk_invariants(sims in sim_matrix()) {
            let (kept, stats) = filter_by_similarity(&sims, ThresholdRule::MeanPlusStd);
            let stats = stats.unwrap();
            prop_assert_eq!(kept[0], 0);
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
            for (pos, &i) in kept.iter().enumerate().skip(1) {
                for &k in &kept[..pos] {
                    prop_assert!(sims[i][k] < stats.tau);
                }
            }
            prop_assert!(stats.dropped < sims.len());
            prop_assert_eq!(stats.tau, stats.mu + stats.sigma);
        }
    }
}
