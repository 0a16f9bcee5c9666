use serde::{Deserialize, Serialize};

use super::LmError;
use crate::scalar::{safe_ln, Scalar};
use crate::vocab::TokenId;

/// Probability vector over a vocabulary, indexed by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> Distribution<T> {
    /// Validates non-negativity and unit mass.
    pub fn new(probs: Vec<T>) -> Result<Self, LmError> {
        if probs.is_empty() {
            return Err(LmError::InvalidDistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= T::zero()) || !p.is_finite()) {
            return Err(LmError::InvalidDistribution(format!(
                "entry {p} is not a probability"
            )));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::norm_tolerance() {
            return Err(LmError::InvalidDistribution(format!(
                "mass {total} differs from 1"
            )));
        }
        Ok(Distribution { probs })
    }

    /// Scales non-negative weights to unit mass.
    pub fn normalized(weights: Vec<T>) -> Result<Self, LmError> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(LmError::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Distribution::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(support: usize) -> Self {
        let p = T::one() / T::from_usize(support).expect("support fits a float");
        Distribution {
            probs: vec![p; support],
        }
    }

    pub fn point_mass(support: usize, token: TokenId) -> Self {
        let mut probs = vec![T::zero(); support];
        probs[token.index()] = T::one();
        Distribution { probs }
    }

    /// Softmax of logits; `-inf` entries get probability zero.
    pub fn softmax(logits: &[T]) -> Result<Self, LmError> {
        let max = logits
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(T::neg_infinity(), T::max);
        if !max.is_finite() {
            return Err(LmError::InvalidDistribution("no finite logit".into()));
        }
        let exps: Vec<T> = logits
            .iter()
            .map(|&x| {
                if x.is_finite() {
                    (x - max).exp()
                } else {
                    T::zero()
                }
            })
            .collect();
        Distribution::normalized(exps)
    }

    /// Builds from sparse `(token, probability)` pairs.
    pub fn from_pairs(support: usize, pairs: &[(TokenId, T)]) -> Result<Self, LmError> {
        let mut probs = vec![T::zero(); support];
        for &(tok, p) in pairs {
            let slot = probs.get_mut(tok.index()).ok_or_else(|| {
                LmError::InvalidDistribution(format!("token {tok} outside support {support}"))
            })?;
            *slot += p;
        }
        Distribution::new(probs)
    }

    /// Wraps an already-normalized vector without re-checking it.
    pub(crate) fn from_raw(probs: Vec<T>) -> Self {
        Distribution { probs }
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> T {
        self.probs
            .get(token.index())
            .copied()
            .unwrap_or_else(T::zero)
    }

    pub fn log_prob(&self, token: TokenId) -> T {
        safe_ln(self.prob(token))
    }

    pub fn total(&self) -> T {
        self.probs.iter().copied().sum()
    }

    /// `(1 - weight) * self + weight * other`.
    pub fn mix(&self, other: &Self, weight: T) -> Self {
        let keep = T::one() - weight;
        Distribution {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(&a, &b)| keep * a + weight * b)
                .collect(),
        }
    }

    /// Tokens with positive probability, descending, smaller id first on ties.
    pub fn ranked(&self) -> Vec<(TokenId, T)> {
        let mut out: Vec<(TokenId, T)> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > T::zero())
            .map(|(i, &p)| (TokenId(i as u32), p))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        out
    }

    pub fn argmax(&self) -> Option<TokenId> {
        self.ranked().first().map(|(t, _)| *t)
    }

    /// Inverse-CDF draw over token ids in ascending order, `u` in `[0, 1)`.
    pub fn sample_with(&self, u: T) -> TokenId {
        let mut acc = T::zero();
        let mut last = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= T::zero() {
                continue;
            }
            acc += p;
            last = Some(i);
            if u < acc {
                return TokenId(i as u32);
            }
        }
        TokenId(last.expect("distribution has positive mass") as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mass() {
        assert!(Distribution::new(vec![0.5f64, 0.4]).is_err());
        assert!(Distribution::new(vec![1.5f64, -0.5]).is_err());
        assert!(Distribution::new(vec![0.5f64, 0.5]).is_ok());
    }

    #[test]
    fn softmax_handles_neg_infinity() {
        let d = Distribution::softmax(&[0.0f64, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn ranked_breaks_ties_by_id() {
        let d = Distribution::new(vec![0.25f64, 0.5, 0.25, 0.0]).unwrap();
        let r: Vec<u32> = d.ranked().iter().map(|(t, _)| t.0).collect();
        assert_eq!(r, vec![1, 0, 2]);
    }

    #[test]
    fn sampling_walks_cdf() {
        let d = Distribution::new(vec![0.0f64, 0.25, 0.75]).unwrap();
        assert_eq!(d.sample_with(0.0), TokenId(1));
        assert_eq!(d.sample_with(0.2499), TokenId(1));
        assert_eq!(d.sample_with(0.25), TokenId(2));
        assert_eq!(d.sample_with(0.999_999_999), TokenId(2));
    }

    #[test]
    fn works_in_f32() {
        let d = Distribution::<f32>::softmax(&[1.0, 2.0, 3.0]).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-6);
    }
}
