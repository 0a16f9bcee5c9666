//! Word-level vocabulary with a fixed block of reserved marker tokens.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index into a [`Vocab`]. Ordering is by id, which is the tie-break order
/// used by every ranking routine in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_special(self) -> bool {
        self.0 < NUM_SPECIAL
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub const BLANK: &str = "[BLANK]";
pub const EVENT_OPEN: &str = "<event>";
pub const EVENT_CLOSE: &str = "</event>";
pub const PRE_OPEN: &str = "<pre>";
pub const PRE_CLOSE: &str = "</pre>";
pub const CONTROL: &str = "<E>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

/// Reserved tokens in id order: `[BLANK]` is id 0, `<eos>` is id 7.
pub const SPECIAL_TOKENS: [&str; 8] = [
    BLANK,
    EVENT_OPEN,
    EVENT_CLOSE,
    PRE_OPEN,
    PRE_CLOSE,
    CONTROL,
    SEP,
    EOS,
];

const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;

pub const BLANK_ID: TokenId = TokenId(0);
pub const EVENT_OPEN_ID: TokenId = TokenId(1);
pub const EVENT_CLOSE_ID: TokenId = TokenId(2);
pub const PRE_OPEN_ID: TokenId = TokenId(3);
pub const PRE_CLOSE_ID: TokenId = TokenId(4);
pub const CONTROL_ID: TokenId = TokenId(5);
pub const SEP_ID: TokenId = TokenId(6);
pub const EOS_ID: TokenId = TokenId(7);

pub fn is_special_token(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

/// Drops every reserved token, leaving only content words.
pub fn strip_special<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_special_token(t))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is outside a vocabulary of {1} entries")]
    UnknownId(u32, usize),
    #[error("vocabulary must start with the reserved tokens in order")]
    BadReservedBlock,
    #[error("duplicate vocabulary entry {0:?}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIAL_TOKENS {
            vocab.insert(t);
        }
        vocab
    }

    /// Builds a vocabulary from sequences; content tokens are added in
    /// first-seen order after the reserved block.
    pub fn from_sequences<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut vocab = Vocab::new();
        for seq in sequences {
            for t in seq {
                vocab.insert(t.as_ref());
            }
        }
        vocab
    }

    /// Rebuilds from a serialized token list, checking the reserved block.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(VocabError::BadReservedBlock);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = TokenId(self.tokens.len() as u32);
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId, VocabError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| VocabError::UnknownToken(token.to_owned()))
    }

    pub fn token(&self, id: TokenId) -> Result<&str, VocabError> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or(VocabError::UnknownId(id.0, self.tokens.len()))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>, VocabError> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>, VocabError> {
        ids.iter()
            .map(|&id| self.token(id).map(str::to_owned))
            .collect()
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), VocabError> {
        match ids.iter().find(|id| id.index() >= self.tokens.len()) {
            Some(id) => Err(VocabError::UnknownId(id.0, self.tokens.len())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::new();
        assert_eq!(v.len(), 8);
        assert_eq!(v.id(BLANK).unwrap(), BLANK_ID);
        assert_eq!(v.id(PRE_OPEN).unwrap(), PRE_OPEN_ID);
        assert_eq!(v.id(CONTROL).unwrap(), CONTROL_ID);
        assert_eq!(v.id(SEP).unwrap(), SEP_ID);
        assert_eq!(v.id(EOS).unwrap(), EOS_ID);
    }

    #[test]
    fn from_tokens_rejects_reordered_specials() {
        let mut toks: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        toks.swap(0, 1);
        assert_eq!(Vocab::from_tokens(toks), Err(VocabError::BadReservedBlock));
    }

    #[test]
    fn unknown_token_is_an_error() {
        let v = Vocab::from_sequences([&["a", "b"][..]]);
        assert_eq!(v.id("a").unwrap(), TokenId(8));
        assert!(matches!(v.id("zzz"), Err(VocabError::UnknownToken(_))));
    }
}
