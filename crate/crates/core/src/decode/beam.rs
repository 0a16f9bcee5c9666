use std::cmp::Ordering;

use super::{DecodeConfig, DecodeError, Hypothesis};
use crate::lm::SequenceModel;
use crate::scalar::{safe_ln, Scalar};
use crate::vocab::{TokenId, EOS_ID};

fn full_sequence<T>(h: &Hypothesis<T>) -> impl Iterator<Item = TokenId> + '_ {
    h.tokens.iter().copied().chain(h.ended.then_some(EOS_ID))
}

/// Higher score first, then the lexicographically smaller id sequence
/// (`<eos>` included).
fn rank<T: Scalar>(a: &Hypothesis<T>, b: &Hypothesis<T>, alpha: T) -> Ordering {
    b.score(alpha)
        .partial_cmp(&a.score(alpha))
        .unwrap_or(Ordering::Equal)
        .then_with(|| full_sequence(a).cmp(full_sequence(b)))
}

/// Beam search from `prefix`. Returns up to `beam_width` finished hypotheses,
/// best first.
pub fn beam_search<T, M>(
    model: &M,
    prefix: &[TokenId],
    config: &DecodeConfig<T>,
) -> Result<Vec<Hypothesis<T>>, DecodeError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
{
    config.validate()?;
    let k = config.beam_width;
    let alpha = config.length_norm_alpha;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: T::zero(),
        finished: false,
        ended: false,
    }];
    let mut finished: Vec<Hypothesis<T>> = Vec::new();
    let mut ctx = prefix.to_vec();

    while !live.is_empty() {
        let mut expansions = Vec::new();
        for h in &live {
            ctx.truncate(prefix.len());
            ctx.extend_from_slice(&h.tokens);
            let dist = model.next_dist(&ctx)?;
            for (tok, p) in dist.ranked() {
                let logprob = h.logprob + safe_ln(p);
                let mut next = Hypothesis {
                    tokens: h.tokens.clone(),
                    logprob,
                    finished: false,
                    ended: tok == EOS_ID,
                };
                if !next.ended {
                    next.tokens.push(tok);
                }
                next.finished = next.ended || next.steps() >= config.max_len;
                expansions.push(next);
            }
        }
        expansions.sort_by(|a, b| rank(a, b, alpha));
        expansions.truncate(k);
        live.clear();
        for h in expansions {
            if h.finished {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        finished.sort_by(|a, b| rank(a, b, alpha));
        finished.truncate(k);

        // Log-probabilities only fall as hypotheses grow, so without length
        // normalization no live beam can overtake a full finished list.
        if alpha == T::zero() && finished.len() >= k {
            let worst = finished[k - 1].logprob;
            if live.iter().all(|h| h.logprob < worst) {
                break;
            }
        }
    }
    Ok(finished)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{Distribution, ExplicitTableModel, TableBuilder};
    use crate::vocab::Vocab;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn fixture() -> ExplicitTableModel<f64> {
        TableBuilder::new(1)
            .entry(&["start"], &[("A", 0.6), ("B", 0.4)])
            .entry(&["A"], &[("<eos>", 1.0)])
            .entry(&["B"], &[("C", 1.0)])
            .entry(&["C"], &[("<eos>", 1.0)])
            .build()
            .unwrap()
    }

    fn config(k: usize, max_len: usize) -> DecodeConfig<f64> {
        DecodeConfig {
            beam_width: k,
            max_len,
            ..DecodeConfig::default()
        }
    }

    fn words(m: &ExplicitTableModel<f64>, h: &Hypothesis<f64>) -> Vec<String> {
        m.vocab().decode(&h.tokens).unwrap()
    }

    #[test]
    fn two_beams_cover_both_paths() {
        let m = fixture();
        let start = m.vocab().encode(&["start"]).unwrap();
        let out = beam_search(&m, &start, &config(2, 10)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(words(&m, &out[0]), vec!["A"]);
        assert_eq!(words(&m, &out[1]), vec!["B", "C"]);
        assert_eq!(out[0].logprob, 0.6f64.ln());
        assert_eq!(out[1].logprob, 0.4f64.ln());
        assert!(out.iter().all(|h| h.finished && h.ended));
    }

    #[test]
    fn single_beam_is_greedy() {
        let m = fixture();
        let start = m.vocab().encode(&["start"]).unwrap();
        let out = beam_search(&m, &start, &config(1, 10)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(words(&m, &out[0]), vec!["A"]);
    }

    #[test]
    fn length_cap_finishes_unended() {
        let m = fixture();
        let start = m.vocab().encode(&["start"]).unwrap();
        let out = beam_search(&m, &start, &config(2, 1)).unwrap();
        assert_eq!(words(&m, &out[0]), vec!["A"]);
        assert!(out
            .iter()
            .all(|h| h.finished && !h.ended && h.tokens.len() == 1));
    }

    #[test]
    fn length_normalization_changes_ranking() {
        let m = TableBuilder::new(1)
            .entry(&["s"], &[("x", 0.5), ("y", 0.5)])
            .entry(&["x"], &[("<eos>", 1.0)])
            .entry(&["y"], &[("z", 0.9), ("<eos>", 0.1)])
            .entry(&["z"], &[("<eos>", 1.0)])
            .build::<f64>()
            .unwrap();
        let start = m.vocab().encode(&["s"]).unwrap();
        let plain = beam_search(&m, &start, &config(3, 5)).unwrap();
        assert_eq!(words(&m, &plain[0]), vec!["x"]);
        let normed = beam_search(
            &m,
            &start,
            &DecodeConfig {
                length_norm_alpha: 1.0,
                ..config(3, 5)
            },
        )
        .unwrap();
        assert_eq!(words(&m, &normed[0]), vec!["y", "z"]);
    }

    /// Every terminal path with its log-probability, by depth-first search.
    fn enumerate(
        m: &ExplicitTableModel<f64>,
        prefix: &[TokenId],
        max_len: usize,
    ) -> Vec<(Vec<TokenId>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64)];
        while let Some((seq, lp)) = stack.pop() {
            let mut ctx = prefix.to_vec();
            ctx.extend(&seq);
            let d = m.next_dist(&ctx).unwrap();
            for (i, &p) in d.probs().iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let mut next = seq.clone();
                next.push(TokenId(i as u32));
                let lp = lp + p.ln();
                if TokenId(i as u32) == EOS_ID || next.len() >= max_len {
                    out.push((next, lp));
                } else {
                    stack.push((next, lp));
                }
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    /// Order-1 table over `n` content tokens plus a start symbol.
    fn random_table(n: usize, rows: &[Vec<u8>]) -> (ExplicitTableModel<f64>, TokenId) {
        let mut vocab = Vocab::new();
        let start = vocab.insert("s");
        let content: Vec<TokenId> = (0..n).map(|i| vocab.insert(&format!("w{i}"))).collect();
        let mut outcomes = content.clone();
        outcomes.push(EOS_ID);
        let mut table = BTreeMap::new();
        for (row, ctx) in rows
            .iter()
            .zip(std::iter::once(start).chain(content.iter().copied()))
        {
            let mut w = vec![0.0f64; vocab.len()];
            for (tok, &x) in outcomes.iter().zip(row) {
                w[tok.index()] = f64::from(x);
            }
            if w.iter().sum::<f64>() == 0.0 {
                w[EOS_ID.index()] = 1.0;
            }
            table.insert(vec![ctx], Distribution::normalized(w).unwrap());
        }
        (ExplicitTableModel::new(1, vocab, table).unwrap(), start)
    }

    fn rows() -> impl Strategy<Value = (usize, Vec<Vec<u8>>, usize)> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(n, max_len)| {
            (
                Just(n),
                prop::collection::vec(prop::collection::vec(0u8..4, n + 1), n + 1),
                Just(max_len),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn wide_beam_matches_enumeration((n, rows, max_len) in rows()) {
            let (m, start) = random_table(n, &rows);
            let all = enumerate(&m, &[start], max_len);
            let out = beam_search(&m, &[start], &config(all.len(), max_len)).unwrap();
            let got: Vec<(Vec<TokenId>, f64)> = out
                .iter()
                .map(|h| (full_sequence(h).collect(), h.logprob))
                .collect();
            prop_assert_eq!(got, all);
        }

        #[test]
        fn beam_is_deterministic_and_bounded((n, rows, max_len) in rows(), k in 1usize..6) {
            let (m, start) = random_table(n, &rows);
            let a = beam_search(&m, &[start], &config(k, max_len)).unwrap();
            let b = beam_search(&m, &[start], &config(k, max_len)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.len() <= k && !a.is_empty());
            for h in &a {
                prop_assert!(h.logprob <= 0.0);
                prop_assert!(h.tokens.len() <= max_len);
            }
        }
    }
}
