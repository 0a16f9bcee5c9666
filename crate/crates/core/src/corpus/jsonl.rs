//! One JSON record per line, UTF-8.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::AnnotatedSentence;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Parses every non-empty line, keeping per-line failures so callers can
/// report several bad records at once.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(
    reader: R,
) -> io::Result<Vec<Result<T, JsonlError>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| JsonlError::Record {
            line: i + 1,
            message: e.to_string(),
        }));
    }
    Ok(out)
}

/// Reads and validates annotated sentences. On failure returns every bad
/// record's error in file order.
pub fn read_sentences(path: &Path) -> Result<Vec<AnnotatedSentence>, Vec<JsonlError>> {
    let file = std::fs::File::open(path).map_err(|e| vec![JsonlError::Io(e)])?;
    let parsed = read_jsonl::<AnnotatedSentence, _>(io::BufReader::new(file))
        .map_err(|e| vec![JsonlError::Io(e)])?;
    let mut good = Vec::with_capacity(parsed.len());
    let mut bad = Vec::new();
    for (i, rec) in parsed.into_iter().enumerate() {
        match rec {
            Ok(s) => match s.validate() {
                Ok(()) => good.push(s),
                Err(e) => bad.push(JsonlError::Record {
                    line: i + 1,
                    message: e.to_string(),
                }),
            },
            Err(e) => bad.push(e),
        }
    }
    if bad.is_empty() {
        Ok(good)
    } else {
        Err(bad)
    }
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelationKind, Span};

    #[test]
    fn schema_field_names() {
        let s = AnnotatedSentence {
            id: "a".into(),
            tokens: vec!["x".into(), "y".into()],
            target: Span::new(1, 2, 1),
            precondition: None,
            label: None,
            kind: RelationKind::TemporalBefore,
        };
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"id":"a","tokens":["x","y"],"target":{"start":1,"end":2,"trigger":1},"precondition":null,"label":null,"kind":"temporal_before"}"#
        );
    }

    #[test]
    fn bad_lines_are_reported_with_numbers() {
        let text = "{\"id\":1}\n\n{\"id\":\"b\",\"tokens\":[\"q\"],\"target\":{\"start\":0,\"end\":1,\"trigger\":0},\"precondition\":null,\"label\":null,\"kind\":\"precondition\"}\n";
        let recs = read_jsonl::<AnnotatedSentence, _>(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(matches!(recs[0], Err(JsonlError::Record { line: 1, .. })));
        assert!(recs[1].is_ok());
    }
}
