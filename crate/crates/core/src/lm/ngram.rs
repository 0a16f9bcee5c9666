//! Interpolated add-k n-gram model with a control-code copy bias.
//!
//! Smoothing is recursive. Starting from the uniform distribution, each order
//! `m = 1..=n` whose context `h` (the last `m - 1` tokens) was seen in
//! training refines the previous estimate:
//!
//! ```text
//! p_m(w | h) = (c(h, w) + k * V * p_{m-1}(w | h')) / (c(h) + k * V)
//! ```
//!
//! where `h'` drops the oldest token of `h`. Unseen contexts pass the lower
//! order through unchanged. The effective interpolation weights are
//! `c(h) / (c(h) + kV)` on the order-`m` relative frequency and the remainder
//! on the lower order; with `k = 0` a seen context reproduces its
//! maximum-likelihood frequencies exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Distribution, LmError, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocab, CONTROL_ID, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig<T> {
    pub order: usize,
    pub add_k: T,
    /// Mixture weight of the control-code point mass, in `[0, 1)`.
    pub copy_bias: T,
    /// Weight of pretraining counts, in `[0, 1]`.
    pub pretrain_weight: T,
    /// Count only predictions of tokens after the first `<sep>` of each
    /// sequence. Contexts may still reach back into the prompt.
    #[serde(default)]
    pub output_only: bool,
}

impl<T: Scalar> Default for NGramConfig<T> {
    fn default() -> Self {
        NGramConfig {
            order: 3,
            add_k: T::from_f64_lossy(0.1),
            copy_bias: T::from_f64_lossy(0.3),
            pretrain_weight: T::from_f64_lossy(0.5),
            output_only: false,
        }
    }
}

impl<T: Scalar> NGramConfig<T> {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: String| Err(LmError::Argument(m));
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if !(self.add_k >= T::zero()) || !self.add_k.is_finite() {
            return bad(format!(
                "add_k {} must be a finite non-negative number",
                self.add_k
            ));
        }
        if !(self.copy_bias >= T::zero() && self.copy_bias < T::one()) {
            return bad(format!("copy bias {} must lie in [0, 1)", self.copy_bias));
        }
        if !(self.pretrain_weight >= T::zero() && self.pretrain_weight <= T::one()) {
            return bad(format!(
                "pretrain weight {} must lie in [0, 1]",
                self.pretrain_weight
            ));
        }
        Ok(())
    }
}

/// Weighted continuation counts of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCounts<T> {
    pub total: T,
    pub next: BTreeMap<TokenId, T>,
}

impl<T: Scalar> ContextCounts<T> {
    fn add(&mut self, tok: TokenId, w: T) {
        self.total += w;
        *self.next.entry(tok).or_insert_with(T::zero) += w;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel<T> {
    config: NGramConfig<T>,
    vocab: Vocab,
    /// `counts[m - 1]` holds contexts of length `m - 1`.
    counts: Vec<BTreeMap<Vec<TokenId>, ContextCounts<T>>>,
}

/// Trains on `finetune` with `pretrain` counts mixed in by
/// `config.pretrain_weight`. Corpora with zero weight are skipped entirely.
pub fn train_ngram<T: Scalar, S: AsRef<str>>(
    vocab: Vocab,
    pretrain: &[Vec<S>],
    finetune: &[Vec<S>],
    config: NGramConfig<T>,
) -> Result<NGramModel<T>, LmError> {
    config.validate()?;
    if finetune.iter().all(|s| s.is_empty()) {
        return Err(LmError::Training("fine-tuning corpus is empty".into()));
    }
    let mut counts = vec![BTreeMap::new(); config.order];
    let w_pre = config.pretrain_weight;
    let w_fine = T::one() - w_pre;
    for (corpus, weight) in [(pretrain, w_pre), (finetune, w_fine)] {
        if weight <= T::zero() {
            continue;
        }
        for seq in corpus {
            let ids = vocab.encode(seq)?;
            let start = if config.output_only {
                match ids.iter().position(|&t| t == SEP_ID) {
                    Some(sep) => sep + 1,
                    None => continue,
                }
            } else {
                0
            };
            accumulate(&mut counts, &ids, start, weight);
        }
    }
    if counts[0].is_empty() {
        return Err(LmError::Training("no token positions were counted".into()));
    }
    Ok(NGramModel {
        config,
        vocab,
        counts,
    })
}

fn accumulate<T: Scalar>(
    counts: &mut [BTreeMap<Vec<TokenId>, ContextCounts<T>>],
    seq: &[TokenId],
    start: usize,
    weight: T,
) {
    for i in start..seq.len() {
        for (m, table) in counts.iter_mut().enumerate() {
            if m > i {
                break;
            }
            table
                .entry(seq[i - m..i].to_vec())
                .or_insert_with(|| ContextCounts {
                    total: T::zero(),
                    next: BTreeMap::new(),
                })
                .add(seq[i], weight);
        }
    }
}

impl<T: Scalar> NGramModel<T> {
    pub(crate) fn from_parts(
        config: NGramConfig<T>,
        vocab: Vocab,
        counts: Vec<BTreeMap<Vec<TokenId>, ContextCounts<T>>>,
    ) -> Result<Self, LmError> {
        config.validate()?;
        if counts.len() != config.order {
            return Err(LmError::Argument(format!(
                "{} count tables for order {}",
                counts.len(),
                config.order
            )));
        }
        for (m, table) in counts.iter().enumerate() {
            for (ctx, cc) in table {
                if ctx.len() != m {
                    return Err(LmError::Argument(format!(
                        "context of length {} stored at order {}",
                        ctx.len(),
                        m + 1
                    )));
                }
                vocab.check(ctx)?;
                vocab.check(&cc.next.keys().copied().collect::<Vec<_>>())?;
            }
        }
        Ok(NGramModel {
            config,
            vocab,
            counts,
        })
    }

    pub fn config(&self) -> &NGramConfig<T> {
        &self.config
    }

    pub fn counts(&self) -> &[BTreeMap<Vec<TokenId>, ContextCounts<T>>] {
        &self.counts
    }

    /// Counts of tokens following the single token `tok`.
    pub fn successor_counts(&self, tok: TokenId) -> Option<&ContextCounts<T>> {
        self.counts.get(1).and_then(|t| t.get(&[tok][..]))
    }

    /// Smoothed n-gram distribution without the copy bias.
    pub fn smoothed_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        self.vocab.check(prefix)?;
        let v = self.vocab.len();
        let kv = self.config.add_k * T::from_usize(v).expect("vocab size fits a float");
        let mut probs = vec![T::one() / T::from_usize(v).expect("vocab size fits a float"); v];
        for (m, table) in self.counts.iter().enumerate() {
            if m > prefix.len() {
                break;
            }
            let ctx = &prefix[prefix.len() - m..];
            let Some(cc) = table.get(ctx) else { continue };
            let denom = cc.total + kv;
            if !(denom > T::zero()) {
                continue;
            }
            let keep = kv / denom;
            for p in probs.iter_mut() {
                *p *= keep;
            }
            for (tok, &c) in &cc.next {
                probs[tok.index()] += c / denom;
            }
        }
        Ok(Distribution::from_raw(probs))
    }

    /// Trigger of a control code that still awaits emission: the token after
    /// the last `<E>` preceding the last `<sep>`, provided it does not occur
    /// after that `<sep>`.
    pub fn pending_control_code(prefix: &[TokenId]) -> Option<TokenId> {
        let sep = prefix.iter().rposition(|&t| t == SEP_ID)?;
        let code = prefix[..sep].iter().rposition(|&t| t == CONTROL_ID)?;
        let trigger = *prefix.get(code + 1)?;
        if code + 1 >= sep || trigger.is_special() {
            return None;
        }
        (!prefix[sep + 1..].contains(&trigger)).then_some(trigger)
    }
}

impl<T: Scalar> SequenceModel<T> for NGramModel<T> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        let base = self.smoothed_dist(prefix)?;
        if self.config.copy_bias > T::zero() {
            if let Some(trigger) = Self::pending_control_code(prefix) {
                let point = Distribution::point_mass(self.vocab.len(), trigger);
                return Ok(base.mix(&point, self.config.copy_bias));
            }
        }
        Ok(base)
    }
}
