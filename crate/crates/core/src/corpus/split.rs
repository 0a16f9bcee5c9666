//! Deterministic 8:1:1 train/dev/test partition.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotatedSentence, RelationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Records derived from the same sentence share the id prefix before `#`
/// and always land in the same split.
pub fn base_id(id: &str) -> &str {
    id.split('#').next().unwrap_or(id)
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Orders distinct base ids by SHA-256 and cuts the order at 80% and 90%,
/// separately for each relation kind. Records of one sentence share a split.
pub fn assign_splits(records: &[AnnotatedSentence]) -> Vec<Split> {
    let mut groups: BTreeMap<RelationKind, BTreeMap<[u8; 32], &str>> = BTreeMap::new();
    for r in records {
        let b = base_id(&r.id);
        groups.entry(r.kind).or_default().insert(id_hash(b), b);
    }
    let mut lookup: HashMap<&str, Split> = HashMap::new();
    for bases in groups.values() {
        let n = bases.len();
        let train_end = (n * 8).div_ceil(10);
        let dev_end = (n * 9).div_ceil(10);
        for (rank, b) in bases.values().enumerate() {
            let split = if rank < train_end {
                Split::Train
            } else if rank < dev_end {
                Split::Dev
            } else {
                Split::Test
            };
            lookup.entry(*b).or_insert(split);
        }
    }
    records.iter().map(|r| lookup[base_id(&r.id)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelationKind, Span};

    fn rec(id: &str) -> AnnotatedSentence {
        AnnotatedSentence {
            id: id.into(),
            tokens: vec!["a".into()],
            target: Span::new(0, 1, 0),
            precondition: None,
            label: None,
            kind: RelationKind::Precondition,
        }
    }

    #[test]
    fn exact_ratio_on_round_counts() {
        let recs: Vec<_> = (0..1000).map(|i| rec(&format!("s{i}"))).collect();
        let splits = assign_splits(&recs);
        let count = |s| splits.iter().filter(|x| **x == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Dev), count(Split::Test)),
            (800, 100, 100)
        );
    }

    #[test]
    fn derived_records_follow_their_sentence() {
        let recs = vec![rec("s1"), rec("s1#pos"), rec("s1#neg"), rec("s2")];
        let splits = assign_splits(&recs);
        assert_eq!(splits[0], splits[1]);
        assert_eq!(splits[0], splits[2]);
    }
}
