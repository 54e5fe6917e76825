//! Logit vectors, probability vectors and the [`LogitSource`] abstraction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenSeq, Vocab};

/// Unnormalized next-token scores. Entries may be `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(pub Vec<f64>);

/// A normalized next-token distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(pub Vec<f64>);

impl LogitVector {
    pub fn zeros(n: usize) -> Self {
        LogitVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest score; ties go to the lowest id.
    /// `None` when no entry exceeds `-inf`.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.0)
    }

    /// Up to `n` (id, score) pairs with finite scores, best first.
    pub fn top(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.0.len())
            .filter(|&i| self.0[i] > f64::NEG_INFINITY)
            .collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|i| (i, self.0[i])).collect()
    }

    pub fn softmax(&self) -> Result<ProbVector> {
        softmax(self)
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.0.len() == expected {
            Ok(())
        } else {
            Err(Error::Shape {
                expected,
                got: self.0.len(),
            })
        }
    }
}

impl ProbVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x == f64::NEG_INFINITY || x.is_nan() {
            continue;
        }
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Max-stabilized softmax. `-inf` entries map to exactly zero probability.
pub fn softmax(l: &LogitVector) -> Result<ProbVector> {
    let max = l
        .0
        .iter()
        .copied()
        .filter(|x| *x > f64::NEG_INFINITY)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution);
    }
    let mut out: Vec<f64> = l
        .0
        .iter()
        .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() })
        .collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    Ok(ProbVector(out))
}

/// Log-softmax, with `-inf` preserved for masked entries.
pub fn log_softmax(l: &LogitVector) -> Result<Vec<f64>> {
    let max = l
        .0
        .iter()
        .copied()
        .filter(|x| *x > f64::NEG_INFINITY)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution);
    }
    let z: f64 = l
        .0
        .iter()
        .filter(|x| **x > f64::NEG_INFINITY)
        .map(|&x| (x - max).exp())
        .sum();
    let log_z = max + z.ln();
    Ok(l.0.iter().map(|&x| x - log_z).collect())
}

/// The triple (instruction, input, generated prefix) a source conditions on.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeContext {
    pub instruction: TokenSeq,
    pub input: TokenSeq,
    pub prefix: TokenSeq,
}

impl DecodeContext {
    pub fn new(instruction: TokenSeq, input: TokenSeq, prefix: TokenSeq) -> Self {
        DecodeContext {
            instruction,
            input,
            prefix,
        }
    }

    pub fn with_prefix(&self, prefix: TokenSeq) -> Self {
        DecodeContext {
            instruction: self.instruction.clone(),
            input: self.input.clone(),
            prefix,
        }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        vocab.check(&self.instruction)?;
        vocab.check(&self.input)?;
        vocab.check(&self.prefix)
    }
}

/// Anything that maps a decode context to next-token logits.
///
/// Implementations must be deterministic: the same context against the same
/// internal state always yields the same vector.
pub trait LogitSource: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_logits(&self, ctx: &DecodeContext) -> LogitVector;
}

impl<T: LogitSource + ?Sized> LogitSource for Arc<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&self, ctx: &DecodeContext) -> LogitVector {
        (**self).next_logits(ctx)
    }
}

impl<T: LogitSource + ?Sized> LogitSource for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&self, ctx: &DecodeContext) -> LogitVector {
        (**self).next_logits(ctx)
    }
}

/// Scriptable source: the first rule whose suffix matches the generated
/// prefix supplies the logits, otherwise the default does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSource {
    rules: Vec<(TokenSeq, LogitVector)>,
    default: LogitVector,
}

impl TabularSource {
    pub fn new(default: LogitVector) -> Result<Self> {
        if default.argmax().is_none() {
            return Err(Error::DegenerateDistribution);
        }
        Ok(TabularSource {
            rules: Vec::new(),
            default,
        })
    }

    /// Appends a rule. Rules added earlier take precedence.
    pub fn with_rule(mut self, suffix: TokenSeq, logits: LogitVector) -> Result<Self> {
        logits.ensure_len(self.default.len())?;
        if logits.argmax().is_none() {
            return Err(Error::DegenerateDistribution);
        }
        self.rules.push((suffix, logits));
        Ok(self)
    }

    pub fn rules(&self) -> &[(TokenSeq, LogitVector)] {
        &self.rules
    }

    pub fn lookup(&self, prefix: &[usize]) -> &LogitVector {
        self.rules
            .iter()
            .find(|(suffix, _)| prefix.ends_with(suffix))
            .map(|(_, l)| l)
            .unwrap_or(&self.default)
    }
}

impl LogitSource for TabularSource {
    fn vocab_size(&self) -> usize {
        self.default.len()
    }

    fn next_logits(&self, ctx: &DecodeContext) -> LogitVector {
        self.lookup(&ctx.prefix).clone()
    }
}

/// Normal, classification and identification sources over one vocabulary.
#[derive(Clone)]
pub struct ModelTriple {
    pub normal: Arc<dyn LogitSource>,
    pub classification: Arc<dyn LogitSource>,
    pub identification: Arc<dyn LogitSource>,
    pub vocab: Arc<Vocab>,
}

impl ModelTriple {
    pub fn new(
        vocab: Arc<Vocab>,
        normal: Arc<dyn LogitSource>,
        classification: Arc<dyn LogitSource>,
        identification: Arc<dyn LogitSource>,
    ) -> Result<Self> {
        for s in [&normal, &classification, &identification] {
            if s.vocab_size() != vocab.len() {
                return Err(Error::Shape {
                    expected: vocab.len(),
                    got: s.vocab_size(),
                });
            }
        }
        Ok(ModelTriple {
            normal,
            classification,
            identification,
            vocab,
        })
    }

    /// A triple whose three members are the same source.
    pub fn uniform(vocab: Arc<Vocab>, source: Arc<dyn LogitSource>) -> Result<Self> {
        Self::new(vocab, source.clone(), source.clone(), source)
    }
}

impl std::fmt::Debug for ModelTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelTriple")
            .field("vocab_size", &self.vocab.len())
            .finish_non_exhaustive()
    }
}
