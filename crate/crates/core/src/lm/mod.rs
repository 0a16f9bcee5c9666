//! Autoregressive next-token models.
//!
//! [`SequenceModel`] is the only contract the decoders and the pipeline rely
//! on. Two implementations ship with the crate: [`ExplicitTableModel`], whose
//! distributions are written down by hand for exact oracles, and
//! [`NGramModel`], a trainable smoothed n-gram model with a control-code copy
//! bias.

mod dist;
mod ngram;
mod persist;
mod table;

use std::path::PathBuf;

use crate::scalar::{safe_ln, Scalar};
use crate::vocab::{TokenId, Vocab, VocabError};

pub use dist::Distribution;
pub use ngram::{train_ngram, ContextCounts, NGramConfig, NGramModel};
pub use persist::{load, persist, read_manifest, AnyModel, ModelManifest, FORMAT_VERSION};
pub use table::{ExplicitTableModel, TableBuilder};

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("no table entry for context {0:?}")]
    UnknownContext(Vec<u32>),
    #[error("distribution is invalid: {0}")]
    InvalidDistribution(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("model format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("model at {path} has format version {found}, this build reads version {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A next-token distribution provider over a fixed vocabulary.
///
/// Implementations are immutable once built, so one model can serve any
/// number of concurrent decoders.
pub trait SequenceModel<T: Scalar>: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Distribution of the token following `prefix`.
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError>;
}

impl<T: Scalar, M: SequenceModel<T> + ?Sized> SequenceModel<T> for &M {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        (**self).next_dist(prefix)
    }
}

impl<T: Scalar, M: SequenceModel<T> + ?Sized> SequenceModel<T> for Box<M> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        (**self).next_dist(prefix)
    }
}

/// Sum of per-step log-probabilities of `continuation` after `prefix`.
///
/// A zero-probability step yields [`Scalar::log_zero`] for the whole
/// sequence instead of an error.
pub fn sequence_logprob<T: Scalar, M: SequenceModel<T> + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<T, LmError> {
    if continuation.is_empty() {
        return Err(LmError::Argument("continuation must be non-empty".into()));
    }
    let vocab = model.vocab();
    vocab.check(prefix)?;
    vocab.check(continuation)?;
    let mut ctx = prefix.to_vec();
    let mut total = T::zero();
    for &tok in continuation {
        let p = model.next_dist(&ctx)?.prob(tok);
        if p <= T::zero() {
            return Ok(T::log_zero());
        }
        total += safe_ln(p);
        ctx.push(tok);
    }
    Ok(total.max(T::log_zero()))
}
