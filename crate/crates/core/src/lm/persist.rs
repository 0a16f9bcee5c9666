//! On-disk model format.
//!
//! A model is a directory with two files:
//!
//! * `manifest.json`: format version, model kind (`"ngram"` or `"table"`),
//!   scalar type, order, the vocabulary in id order, hyperparameters, the
//!   payload file name and its SHA-256 digest,
//! * `payload.json`: a JSON array. For n-gram models each element is one
//!   order (unigram first) holding `{"context", "total", "next"}` entries, with
//!   `next` a list of `[token_id, count]` pairs. For table models each element
//!   is `{"context", "probs"}` with a dense probability vector.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so reloading reproduces every count and probability bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ContextCounts, Distribution, ExplicitTableModel, LmError, NGramConfig, NGramModel,
    SequenceModel,
};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocab};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PAYLOAD: &str = "payload.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: String,
    pub scalar: String,
    pub order: usize,
    pub vocab: Vec<String>,
    pub hyperparameters: serde_json::Value,
    pub payload: String,
    pub payload_sha256: String,
}

/// Either reference model, loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<T> {
    NGram(NGramModel<T>),
    Table(ExplicitTableModel<T>),
}

impl<T: Scalar> SequenceModel<T> for AnyModel<T> {
    fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::NGram(m) => m.vocab(),
            AnyModel::Table(m) => m.vocab(),
        }
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<Distribution<T>, LmError> {
        match self {
            AnyModel::NGram(m) => m.next_dist(prefix),
            AnyModel::Table(m) => m.next_dist(prefix),
        }
    }
}

impl<T> From<NGramModel<T>> for AnyModel<T> {
    fn from(m: NGramModel<T>) -> Self {
        AnyModel::NGram(m)
    }
}

impl<T> From<ExplicitTableModel<T>> for AnyModel<T> {
    fn from(m: ExplicitTableModel<T>) -> Self {
        AnyModel::Table(m)
    }
}

#[derive(Serialize, Deserialize)]
struct CountEntry<T> {
    context: Vec<TokenId>,
    total: T,
    next: Vec<(TokenId, T)>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry<T> {
    context: Vec<TokenId>,
    probs: Vec<T>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LmError + '_ {
    move |source| LmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> LmError {
    LmError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> LmError + '_ {
    move |e| format_err(path, e.to_string())
}

pub fn persist<T: Scalar>(model: &AnyModel<T>, dir: &Path) -> Result<ModelManifest, LmError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (kind, order, hyper, payload) = match model {
        AnyModel::NGram(m) => {
            let entries: Vec<Vec<CountEntry<T>>> = m
                .counts()
                .iter()
                .map(|table| {
                    table
                        .iter()
                        .map(|(ctx, cc)| CountEntry {
                            context: ctx.clone(),
                            total: cc.total,
                            next: cc.next.iter().map(|(k, v)| (*k, *v)).collect(),
                        })
                        .collect()
                })
                .collect();
            let hyper = serde_json::to_value(m.config()).map_err(json_err(dir))?;
            let bytes = serde_json::to_vec(&entries).map_err(json_err(dir))?;
            ("ngram", m.config().order, hyper, bytes)
        }
        AnyModel::Table(m) => {
            let entries: Vec<TableEntry<T>> = m
                .table()
                .iter()
                .map(|(ctx, d)| TableEntry {
                    context: ctx.clone(),
                    probs: d.probs().to_vec(),
                })
                .collect();
            let bytes = serde_json::to_vec(&entries).map_err(json_err(dir))?;
            ("table", m.order(), serde_json::json!({}), bytes)
        }
    };
    let payload_path = dir.join(PAYLOAD);
    fs::write(&payload_path, &payload).map_err(io_err(&payload_path))?;
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_owned(),
        scalar: T::NAME.to_owned(),
        order,
        vocab: model.vocab().tokens().to_vec(),
        hyperparameters: hyper,
        payload: PAYLOAD.to_owned(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let manifest_path = dir.join(MANIFEST);
    let text = serde_json::to_vec_pretty(&manifest).map_err(json_err(dir))?;
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Reads and checks a manifest without loading the payload.
pub fn read_manifest(dir: &Path) -> Result<ModelManifest, LmError> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: ModelManifest = serde_json::from_slice(&bytes).map_err(json_err(&path))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LmError::VersionMismatch {
            path,
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

pub fn load<T: Scalar>(dir: &Path) -> Result<AnyModel<T>, LmError> {
    let manifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if manifest.scalar != T::NAME {
        return Err(format_err(
            &manifest_path,
            format!(
                "stored scalar {} but {} was requested",
                manifest.scalar,
                T::NAME
            ),
        ));
    }
    let payload_path: PathBuf = dir.join(&manifest.payload);
    let payload = fs::read(&payload_path).map_err(io_err(&payload_path))?;
    let digest = hex::encode(Sha256::digest(&payload));
    if digest != manifest.payload_sha256 {
        return Err(format_err(
            &payload_path,
            format!(
                "payload digest {digest} does not match manifest {} (kind {}, order {}, version {})",
                manifest.payload_sha256, manifest.kind, manifest.order, manifest.format_version
            ),
        ));
    }
    let vocab = Vocab::from_tokens(manifest.vocab.clone())
        .map_err(|e| format_err(&manifest_path, e.to_string()))?;
    let bad = |e: LmError| format_err(&payload_path, e.to_string());
    match manifest.kind.as_str() {
        "ngram" => {
            let config: NGramConfig<T> = serde_json::from_value(manifest.hyperparameters.clone())
                .map_err(json_err(&manifest_path))?;
            let entries: Vec<Vec<CountEntry<T>>> =
                serde_json::from_slice(&payload).map_err(json_err(&payload_path))?;
            let counts = entries
                .into_iter()
                .map(|table| {
                    table
                        .into_iter()
                        .map(|e| {
                            (
                                e.context,
                                ContextCounts {
                                    total: e.total,
                                    next: e.next.into_iter().collect(),
                                },
                            )
                        })
                        .collect::<BTreeMap<_, _>>()
                })
                .collect();
            Ok(AnyModel::NGram(
                NGramModel::from_parts(config, vocab, counts).map_err(bad)?,
            ))
        }
        "table" => {
            let entries: Vec<TableEntry<T>> =
                serde_json::from_slice(&payload).map_err(json_err(&payload_path))?;
            let mut table = BTreeMap::new();
            for e in entries {
                table.insert(e.context, Distribution::new(e.probs).map_err(bad)?);
            }
            Ok(AnyModel::Table(
                ExplicitTableModel::new(manifest.order, vocab, table).map_err(bad)?,
            ))
        }
        other => Err(format_err(
            &manifest_path,
            format!("unknown model kind {other:?}"),
        )),
    }
}
