//! Rule-based role judgment over the `mention: label\n` output grammar.
//!
//! A colon splits a mention from its label and a newline ends each pair.
//! The delimiters themselves take the role the line scan yields at their
//! position: `':'` is generated under [`TokenRole::Ide`] and `'\n'` under
//! [`TokenRole::Cls`], so the two role masks partition every target.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Cls,
    Ide,
    Other,
}

/// Role of the token about to be generated after `prefix`.
pub fn next_token_role(prefix: &[usize], vocab: &Vocab) -> TokenRole {
    if prefix.contains(&vocab.eos_id()) {
        return TokenRole::Other;
    }
    let line_start = prefix
        .iter()
        .rposition(|&t| t == vocab.newline_id())
        .map_or(0, |i| i + 1);
    if prefix[line_start..].contains(&vocab.colon_id()) {
        TokenRole::Cls
    } else {
        TokenRole::Ide
    }
}

/// Per-position roles of a target sequence.
pub fn role_annotate(target: &[usize], vocab: &Vocab) -> Vec<TokenRole> {
    // single pass equivalent of calling next_token_role on every prefix
    let mut roles = Vec::with_capacity(target.len());
    let mut in_label = false;
    let mut ended = false;
    for &t in target {
        roles.push(if ended {
            TokenRole::Other
        } else if in_label {
            TokenRole::Cls
        } else {
            TokenRole::Ide
        });
        if t == vocab.eos_id() {
            ended = true;
        } else if t == vocab.newline_id() {
            in_label = false;
        } else if t == vocab.colon_id() {
            in_label = true;
        }
    }
    roles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Excludes classification positions; trains the identification model.
    MaskClassification,
    /// Excludes identification positions; trains the classification model.
    MaskIdentification,
    NoMask,
}

/// Time steps of a target that are excluded from the loss.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskSet {
    pub positions: BTreeSet<usize>,
}

impl MaskSet {
    pub fn contains(&self, t: usize) -> bool {
        self.positions.contains(&t)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn build_mask(target: &[usize], vocab: &Vocab, mode: MaskMode) -> MaskSet {
    let masked_role = match mode {
        MaskMode::MaskClassification => TokenRole::Cls,
        MaskMode::MaskIdentification => TokenRole::Ide,
        MaskMode::NoMask => return MaskSet::default(),
    };
    let positions = role_annotate(target, vocab)
        .into_iter()
        .enumerate()
        .filter(|&(_, r)| r == masked_role)
        .map(|(t, _)| t)
        .collect();
    MaskSet { positions }
}
