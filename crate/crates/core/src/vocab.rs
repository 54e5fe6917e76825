//! Character-level vocabulary shared by every logit source.
//!
//! Ids are assigned by sorting the alphabet, so a fixed alphabet always yields
//! the same ids. One extra end-of-sequence sentinel is appended after the
//! characters; it doubles as left padding for short model contexts.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const COLON: char = ':';
pub const NEWLINE: char = '\n';

/// A sequence of vocabulary ids.
pub type TokenSeq = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<char>,
    id_of: HashMap<char, usize>,
    colon_id: usize,
    newline_id: usize,
    eos_id: usize,
}

impl Vocab {
    /// Builds a vocabulary from an alphabet. `':'` and `'\n'` are required.
    pub fn build<I: IntoIterator<Item = char>>(alphabet: I) -> Result<Self> {
        let sorted: BTreeSet<char> = alphabet.into_iter().collect();
        Self::from_ordered(sorted.into_iter().collect())
    }

    /// Builds a vocabulary whose ids follow the given character order.
    pub fn from_ordered(tokens: Vec<char>) -> Result<Self> {
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, &c) in tokens.iter().enumerate() {
            if id_of.insert(c, i).is_some() {
                return Err(Error::config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        let colon_id = *id_of
            .get(&COLON)
            .ok_or_else(|| Error::config("alphabet must contain ':'"))?;
        let newline_id = *id_of
            .get(&NEWLINE)
            .ok_or_else(|| Error::config("alphabet must contain '\\n'"))?;
        let eos_id = tokens.len();
        Ok(Vocab {
            tokens,
            id_of,
            colon_id,
            newline_id,
            eos_id,
        })
    }

    /// Number of ids, sentinel included.
    pub fn len(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn colon_id(&self) -> usize {
        self.colon_id
    }

    pub fn newline_id(&self) -> usize {
        self.newline_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn chars(&self) -> &[char] {
        &self.tokens
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.id_of.get(&c).copied()
    }

    /// Character for an id; `None` for the sentinel or out-of-range ids.
    pub fn symbol(&self, id: usize) -> Option<char> {
        self.tokens.get(id).copied()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        text.chars().all(|c| self.id_of.contains_key(&c))
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| self.id(ch).ok_or(Error::Tokenization { ch, position }))
            .collect()
    }

    /// Renders ids back to text. Sentinel tokens are dropped.
    pub fn decode_text(&self, seq: &[usize]) -> String {
        seq.iter().filter_map(|&id| self.symbol(id)).collect()
    }

    pub fn check(&self, seq: &[usize]) -> Result<()> {
        match seq.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::InvalidToken {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// JSON form: the array of characters, id = index. The sentinel is implicit.
    pub fn to_json(&self) -> String {
        let strings: Vec<String> = self.tokens.iter().map(|c| c.to_string()).collect();
        serde_json::to_string(&strings).expect("string array serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let strings: Vec<String> = serde_json::from_str(json).map_err(|e| Error::Json {
            path: "<vocab>".into(),
            source: e,
        })?;
        let mut tokens = Vec::with_capacity(strings.len());
        for s in strings {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => tokens.push(c),
                _ => return Err(Error::config(format!("vocab entry {s:?} is not one character"))),
            }
        }
        Self::from_ordered(tokens)
    }

    /// Stable fingerprint carried by checkpoints.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let strings: Vec<String> = self.tokens.iter().map(|c| c.to_string()).collect();
        strings.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        let json = serde_json::to_string(&strings).map_err(serde::de::Error::custom)?;
        Vocab::from_json(&json).map_err(serde::de::Error::custom)
    }
}
