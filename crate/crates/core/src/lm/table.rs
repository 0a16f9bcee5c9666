use std::collections::BTreeMap;

use super::{Distribution, LmError, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocab};

/// Model whose next-token distributions are listed explicitly, keyed by the
/// last `order` tokens of the prefix (fewer at the start of a sequence).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitTableModel<T> {
    order: usize,
    vocab: Vocab,
    table: BTreeMap<Vec<TokenId>, Distribution<T>>,
}

impl<T: Scalar> ExplicitTableModel<T> {
    pub fn new(
        order: usize,
        vocab: Vocab,
        table: BTreeMap<Vec<TokenId>, Distribution<T>>,
    ) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::Argument("table order must be at least 1".into()));
        }
        for (ctx, dist) in &table {
            vocab.check(ctx)?;
            if ctx.len() > order {
                return Err(LmError::Argument(format!(
                    "context of length {} exceeds order {order}",
                    ctx.len()
                )));
            }
            if dist.support() != vocab.len() {
                return Err(LmError::InvalidDistribution(format!(
                    "support {} differs from vocabulary size {}",
                    dist.support(),
                    vocab.len()
                )));
            }
            Distribution::new(dist.probs().to_vec())?;
        }
        Ok(ExplicitTableModel {
            order,
            vocab,
            table,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn table(&self) -> &BTreeMap<Vec<TokenId>, Distribution<T>> {
        &self.table
    }
}

impl<T: Scalar> SequenceModel<T> for ExplicitTableModel<T> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        self.vocab.check(prefix)?;
        let key = &prefix[prefix.len().saturating_sub(self.order)..];
        self.table
            .get(key)
            .cloned()
            .ok_or_else(|| LmError::UnknownContext(key.iter().map(|t| t.0).collect()))
    }
}

/// String-keyed builder for hand-written fixtures.
pub struct TableBuilder {
    order: usize,
    entries: Vec<(Vec<String>, Vec<(String, f64)>)>,
}

impl TableBuilder {
    pub fn new(order: usize) -> Self {
        TableBuilder {
            order,
            entries: Vec::new(),
        }
    }

    pub fn entry(mut self, context: &[&str], dist: &[(&str, f64)]) -> Self {
        self.entries.push((
            context.iter().map(|s| s.to_string()).collect(),
            dist.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
        ));
        self
    }

    pub fn build<T: Scalar>(self) -> Result<ExplicitTableModel<T>, LmError> {
        let mut vocab = Vocab::new();
        for (ctx, dist) in &self.entries {
            for t in ctx {
                vocab.insert(t);
            }
            for (t, _) in dist {
                vocab.insert(t);
            }
        }
        let mut table = BTreeMap::new();
        for (ctx, dist) in &self.entries {
            let key = vocab.encode(ctx)?;
            let pairs: Vec<(TokenId, T)> = dist
                .iter()
                .map(|(t, p)| Ok((vocab.id(t)?, T::from_f64_lossy(*p))))
                .collect::<Result<_, LmError>>()?;
            table.insert(key, Distribution::from_pairs(vocab.len(), &pairs)?);
        }
        ExplicitTableModel::new(self.order, vocab, table)
    }
}
