use rand::Rng;

use super::rng::uniform;
use super::rps::PenaltyState;
use super::{DecodeConfig, DecodeError};
use crate::lm::{Distribution, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, EOS_ID, PRE_OPEN_ID};

/// Keeps the smallest prefix of `dist.ranked()` whose mass reaches `p` and
/// renormalizes it. When every supported token survives the input is returned
/// untouched.
pub fn nucleus_truncate<T: Scalar>(dist: &Distribution<T>, p: T) -> Distribution<T> {
    // Absorbs the rounding of a cumulative sum that lands on `p` exactly.
    let slack = T::epsilon() * T::from_f64_lossy(16.0);
    let ranked = dist.ranked();
    let mut cum = T::zero();
    let mut keep = ranked.len();
    for (i, &(_, q)) in ranked.iter().enumerate() {
        cum += q;
        if cum + slack >= p {
            keep = i + 1;
            break;
        }
    }
    if keep == ranked.len() {
        return dist.clone();
    }
    let kept = &ranked[..keep];
    let mass: T = kept.iter().map(|&(_, q)| q).sum();
    let mut probs = vec![T::zero(); dist.support()];
    for &(tok, q) in kept {
        probs[tok.index()] = q / mass;
    }
    Distribution::from_raw(probs)
}

/// Non-negative logits for the trigger slot: `ln p_i - ln p_min` over the
/// supported tokens, `-inf` elsewhere. Softmax of these gives back `dist`.
pub fn trigger_logits<T: Scalar>(dist: &Distribution<T>) -> Vec<T> {
    let min = dist
        .probs()
        .iter()
        .copied()
        .filter(|p| *p > T::zero())
        .fold(T::infinity(), T::min);
    let base = min.ln();
    dist.probs()
        .iter()
        .map(|&p| {
            if p > T::zero() {
                (p.ln() - base).max(T::zero())
            } else {
                T::neg_infinity()
            }
        })
        .collect()
}

/// `softmax(x_i / I(i in t))` with `I = lambda` for penalized tokens and 1
/// otherwise. `-inf` logits stay excluded.
pub fn penalized_dist<T: Scalar>(
    logits: &[T],
    penalty: &PenaltyState,
    lambda: T,
) -> Result<Distribution<T>, DecodeError> {
    if !(lambda >= T::one()) || !lambda.is_finite() {
        return Err(DecodeError::Config(format!(
            "penalty {lambda} must be a finite value >= 1"
        )));
    }
    if logits.iter().any(|x| x.is_nan() || *x == T::infinity()) {
        return Err(DecodeError::Input("logits must be finite or -inf".into()));
    }
    let scaled: Vec<T> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if penalty.contains(TokenId(i as u32)) {
                x / lambda
            } else {
                x
            }
        })
        .collect();
    Ok(Distribution::softmax(&scaled)?)
}

/// Output of one sampled decode.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    /// Generated tokens, `<eos>` excluded.
    pub tokens: Vec<TokenId>,
    pub ended: bool,
    /// Content token sampled right after the first `<pre>`.
    pub trigger: Option<TokenId>,
}

/// Nucleus sampling from `prompt`. With a penalty state, the step after the
/// first `<pre>` draws from the penalized distribution before truncation.
pub fn sample_continuation<T, M, R>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig<T>,
    rng: &mut R,
    penalty: Option<&PenaltyState>,
) -> Result<SampledSequence, DecodeError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut ctx = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut ended = false;
    let mut trigger = None;
    let mut pre_at: Option<usize> = None;
    while tokens.len() < config.max_len {
        let mut dist = model.next_dist(&ctx)?;
        let at_trigger = pre_at.is_some_and(|i| i + 1 == tokens.len());
        if let (true, Some(state)) = (at_trigger, penalty) {
            dist = penalized_dist(&trigger_logits(&dist), state, config.penalty)?;
        }
        let dist = nucleus_truncate(&dist, config.nucleus_p);
        let tok = dist.sample_with(uniform::<T, R>(rng));
        if tok == EOS_ID {
            ended = true;
            break;
        }
        if at_trigger && !tok.is_special() {
            trigger = Some(tok);
        }
        if tok == PRE_OPEN_ID && pre_at.is_none() {
            pre_at = Some(tokens.len());
        }
        tokens.push(tok);
        ctx.push(tok);
    }
    Ok(SampledSequence {
        tokens,
        ended,
        trigger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> Distribution<f64> {
        Distribution::new(p.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn nucleus_worked_example() {
        let out = nucleus_truncate(&dist(&[0.5, 0.3, 0.15, 0.05]), 0.8);
        assert!(close(out.probs(), &[0.625, 0.375, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn nucleus_full_mass_is_identity() {
        let d = dist(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(nucleus_truncate(&d, 1.0), d);
    }

    #[test]
    fn nucleus_point_mass() {
        let d = Distribution::<f64>::point_mass(5, TokenId(3));
        for p in [0.01, 0.5, 1.0] {
            assert_eq!(nucleus_truncate(&d, p), d);
        }
    }

    #[test]
    fn nucleus_ties_prefer_smaller_id() {
        let out = nucleus_truncate(&dist(&[0.25, 0.25, 0.25, 0.25]), 0.5);
        assert!(close(out.probs(), &[0.5, 0.5, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn nucleus_not_idempotent_when_renormalizing_lifts_the_head() {
        let once = nucleus_truncate(&dist(&[0.45, 0.45, 0.1]), 0.5);
        assert!(close(once.probs(), &[0.5, 0.5, 0.0], 1e-12));
        let twice = nucleus_truncate(&once, 0.5);
        assert!(close(twice.probs(), &[1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn penalty_worked_example() {
        let mut t = PenaltyState::default();
        t.insert(TokenId(1));
        let out = penalized_dist(&[1.0f64, 1.0, 1.0], &t, 1.2).unwrap();
        // exp(1/1.2) vs exp(1), normalized.
        let (e, w) = (1.0f64.exp(), (1.0f64 / 1.2).exp());
        let z = 2.0 * e + w;
        assert!(close(out.probs(), &[e / z, w / z, e / z], 1e-12));
        assert!(close(out.probs(), &[0.35131, 0.29738, 0.35131], 1e-5));
    }

    #[test]
    fn penalty_boosts_negative_logits() {
        let mut t = PenaltyState::default();
        t.insert(TokenId(0));
        let plain = penalized_dist(&[-1.0f64, 0.0], &PenaltyState::default(), 1.2).unwrap();
        let pen = penalized_dist(&[-1.0f64, 0.0], &t, 1.2).unwrap();
        let shrunk = (-1.0f64 / 1.2).exp();
        assert!((plain.probs()[0] - 0.2689).abs() < 1e-4);
        assert!((pen.probs()[0] - shrunk / (1.0 + shrunk)).abs() < 1e-12);
        assert!((pen.probs()[0] - 0.30294).abs() < 1e-5);
        assert!(pen.probs()[0] > plain.probs()[0]);
    }

    #[test]
    fn unit_penalty_is_plain_softmax() {
        let mut t = PenaltyState::default();
        t.insert(TokenId(0));
        t.insert(TokenId(2));
        let logits = [0.3f64, -2.0, 1.7, 0.0];
        let a = penalized_dist(&logits, &t, 1.0).unwrap();
        let b = Distribution::softmax(&logits).unwrap();
        assert!(close(a.probs(), b.probs(), 1e-15));
    }

    #[test]
    fn trigger_logits_reproduce_distribution() {
        let d = dist(&[0.6, 0.0, 0.35, 0.05]);
        let x = trigger_logits(&d);
        assert_eq!(x[1], f64::NEG_INFINITY);
        assert_eq!(x[3], 0.0);
        let back = Distribution::softmax(&x).unwrap();
        assert!(close(back.probs(), d.probs(), 1e-12));
    }

    #[test]
    fn rejects_bad_penalty() {
        assert!(penalized_dist(&[0.0f64, 1.0], &PenaltyState::default(), 0.5).is_err());
        assert!(penalized_dist(&[f64::NAN, 1.0], &PenaltyState::default(), 1.2).is_err());
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..8)
            .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn penalized_is_a_distribution(
            logits in prop::collection::vec(-50.0f64..50.0, 1..10),
            mask in prop::collection::vec(any::<bool>(), 10),
            lambda in 1.0f64..20.0,
        ) {
            let mut t = PenaltyState::default();
            for (i, _) in logits.iter().enumerate().filter(|(i, _)| mask[*i]) {
                t.insert(TokenId(i as u32));
            }
            let d = penalized_dist(&logits, &t, lambda).unwrap();
            prop_assert!((d.total() - 1.0).abs() <= 1e-9);
            prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn penalty_lowers_positive_logit_tokens(
            logits in prop::collection::vec(-10.0f64..10.0, 2..8),
            target in 0usize..8,
            lambda in 1.01f64..10.0,
        ) {
            let i = target % logits.len();
            prop_assume!(logits[i] > 1e-3);
            let mut t = PenaltyState::default();
            t.insert(TokenId(i as u32));
            let plain = Distribution::softmax(&logits).unwrap();
            let pen = penalized_dist(&logits, &t, lambda).unwrap();
            prop_assert!(pen.probs()[i] < plain.probs()[i]);
        }

        #[test]
        fn nucleus_keeps_minimal_head(w in weights(), p in 0.01f64..1.0) {
            let d = Distribution::normalized(w).unwrap();
            let out = nucleus_truncate(&d, p);
            prop_assert!((out.total() - 1.0).abs() <= 1e-9);
            let kept: Vec<_> = d.ranked().into_iter().filter(|(t, _)| out.prob(*t) > 0.0).collect();
            let ranked = d.ranked();
            // Kept tokens form a prefix of the ranking.
            prop_assert_eq!(&kept[..], &ranked[..kept.len()]);
            let mass: f64 = kept.iter().map(|x| x.1).sum();
            let without_last = mass - kept.last().unwrap().1;
            prop_assert!(mass + 1e-12 >= p);
            prop_assert!(without_last < p);
        }

        #[test]
        fn nucleus_idempotent_when_head_stays_short(w in weights(), p in 0.01f64..1.0) {
            let d = Distribution::normalized(w).unwrap();
            let once = nucleus_truncate(&d, p);
            let ranked = once.ranked();
            let head: f64 = ranked[..ranked.len() - 1].iter().map(|x| x.1).sum();
            prop_assume!(head < p - 1e-12);
            let twice = nucleus_truncate(&once, p);
            prop_assert!(close(twice.probs(), once.probs(), 1e-12));
        }
    }
}
