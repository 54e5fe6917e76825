//! Synthetic identify-and-classify benchmark.
//!
//! Each record hides a few lexicon mentions inside random distractor text;
//! the gold answer lists them in order of appearance as `mention: label\n`.
//! Labels come from a hidden mention-to-label map, optionally overridden by
//! a context cue written just before the mention (the way a negation word
//! flips a finding to negative) and optionally perturbed by label noise.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roles::MaskMode;
use crate::train::TrainExample;
use crate::vocab::{Vocab, COLON, NEWLINE};

/// A cue string that forces the label of the mention following it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCue {
    pub text: String,
    pub label: String,
    /// Probability that a mention is preceded by the cue.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub name: String,
    /// Instruction template; `{labels}` expands to the space-joined label set.
    pub instruction: String,
    pub mentions: Vec<String>,
    pub labels: Vec<String>,
    /// Explicit label per mention (same order as `mentions`). Drawn from the
    /// seed when absent.
    #[serde(default)]
    pub assignments: Option<Vec<String>>,
    pub pairs_min: usize,
    pub pairs_max: usize,
    pub distractor_alphabet: String,
    pub distractor_min: usize,
    pub distractor_max: usize,
    /// Probability that a pair's label is swapped for another label.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub cue: Option<ContextCue>,
    pub seed: u64,
}

impl TaskSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Every character the task can produce, plus the grammar delimiters.
    pub fn alphabet(&self) -> BTreeSet<char> {
        let mut set: BTreeSet<char> = [COLON, NEWLINE, ' '].into_iter().collect();
        let texts = self
            .mentions
            .iter()
            .chain(&self.labels)
            .chain([&self.distractor_alphabet, &self.instruction]);
        for t in texts {
            set.extend(t.chars());
        }
        if let Some(c) = &self.cue {
            set.extend(c.text.chars());
        }
        set.remove(&'{');
        set.remove(&'}');
        set.extend(self.expanded_instruction().chars());
        set
    }

    pub fn expanded_instruction(&self) -> String {
        self.instruction.replace("{labels}", &self.labels.join(" "))
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.mentions.is_empty() || self.labels.is_empty() {
            return Err(Error::config("task needs a nonempty lexicon and label set"));
        }
        if self.pairs_min == 0 || self.pairs_min > self.pairs_max {
            return Err(Error::config("pairs range must satisfy 1 <= min <= max"));
        }
        if self.pairs_max > self.mentions.len() {
            return Err(Error::config("pairs_max exceeds the lexicon size"));
        }
        if self.distractor_min > self.distractor_max {
            return Err(Error::config("distractor range must satisfy min <= max"));
        }
        if self.distractor_max > 0 && self.distractor_alphabet.is_empty() {
            return Err(Error::config("distractors need a nonempty alphabet"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise must be in [0, 1]"));
        }
        for m in &self.mentions {
            if m.is_empty() || m.contains([COLON, NEWLINE]) || m.trim() != m {
                return Err(Error::config(format!("mention {m:?} must be nonempty, trimmed and delimiter-free")));
            }
        }
        for l in &self.labels {
            if l.is_empty() || l.contains([COLON, NEWLINE]) || l.trim() != l {
                return Err(Error::config(format!("label {l:?} must be nonempty, trimmed and delimiter-free")));
            }
        }
        if self.distractor_alphabet.contains([COLON, NEWLINE]) {
            return Err(Error::config("distractor alphabet may not contain ':' or '\\n'"));
        }
        if let Some(a) = &self.assignments {
            if a.len() != self.mentions.len() || a.iter().any(|l| !self.labels.contains(l)) {
                return Err(Error::config("assignments must give one known label per mention"));
            }
        }
        if let Some(c) = &self.cue {
            if !self.labels.contains(&c.label) || !(0.0..=1.0).contains(&c.rate) || c.text.is_empty() {
                return Err(Error::config("cue needs known label, nonempty text and rate in [0, 1]"));
            }
        }
        let texts = self
            .mentions
            .iter()
            .chain(&self.labels)
            .chain([&self.distractor_alphabet]);
        for t in texts.chain(self.cue.iter().map(|c| &c.text)) {
            if let Some((position, ch)) = t.chars().enumerate().find(|(_, c)| vocab.id(*c).is_none()) {
                return Err(Error::config(format!(
                    "task text {t:?} has {ch:?} at {position} outside the vocabulary"
                )));
            }
        }
        if !vocab.contains_text(&self.expanded_instruction()) {
            return Err(Error::config("instruction has characters outside the vocabulary"));
        }
        Ok(())
    }

    fn label_map(&self) -> Vec<String> {
        if let Some(a) = &self.assignments {
            return a.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d61_7020_6c61_6265);
        self.mentions
            .iter()
            .map(|_| self.labels[rng.gen_range(0..self.labels.len())].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MieRecord {
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub pairs: Vec<(String, String)>,
    pub target: String,
}

impl MieRecord {
    pub fn gold_output(pairs: &[(String, String)]) -> String {
        pairs.iter().map(|(m, l)| format!("{m}: {l}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub records: Vec<MieRecord>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, split: Split) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?);
        }
        Ok(Corpus { split, records })
    }
}

const MAX_ATTEMPTS: usize = 10_000;

fn generate_split(spec: &TaskSpec, labels: &[String], split: Split, n: usize) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ split.index());
    let distractor: Vec<char> = spec.distractor_alphabet.chars().collect();
    let instruction = spec.expanded_instruction();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut attempt = 0;
        let record = loop {
            attempt += 1;
            if attempt > MAX_ATTEMPTS {
                return Err(Error::config(
                    "could not place mentions without accidental lexicon matches; widen the distractor alphabet",
                ));
            }
            let k = rng.gen_range(spec.pairs_min..=spec.pairs_max);
            let mut chosen: Vec<usize> = (0..spec.mentions.len()).collect();
            chosen.shuffle(&mut rng);
            chosen.truncate(k);
            let fill = |rng: &mut ChaCha8Rng| -> String {
                let len = rng.gen_range(spec.distractor_min..=spec.distractor_max);
                (0..len).map(|_| distractor[rng.gen_range(0..distractor.len())]).collect()
            };
            let mut input = fill(&mut rng);
            let mut pairs = Vec::with_capacity(k);
            for &m in &chosen {
                let mention = &spec.mentions[m];
                let mut label = labels[m].clone();
                if let Some(cue) = &spec.cue {
                    if rng.gen_bool(cue.rate) {
                        input.push_str(&cue.text);
                        label = cue.label.clone();
                    }
                }
                if spec.label_noise > 0.0 && spec.labels.len() > 1 && rng.gen_bool(spec.label_noise) {
                    let others: Vec<&String> = spec.labels.iter().filter(|l| **l != label).collect();
                    label = others[rng.gen_range(0..others.len())].clone();
                }
                input.push_str(mention);
                input.push_str(&fill(&mut rng));
                pairs.push((mention.clone(), label));
            }
            if is_unambiguous(spec, &input, &chosen) {
                break MieRecord {
                    id: format!("{}-{i:05}", split.name()),
                    instruction: instruction.clone(),
                    target: MieRecord::gold_output(&pairs),
                    input,
                    pairs,
                };
            }
        };
        records.push(record);
    }
    Ok(Corpus { split, records })
}

/// Chosen mentions occur exactly once and no other lexicon entry occurs.
fn is_unambiguous(spec: &TaskSpec, input: &str, chosen: &[usize]) -> bool {
    spec.mentions.iter().enumerate().all(|(i, m)| {
        let count = input.match_indices(m.as_str()).count();
        if chosen.contains(&i) {
            count == 1
        } else {
            count == 0
        }
    })
}

/// Generates train, valid and test corpora. Each split draws from its own
/// seeded stream, so changing one split's size leaves the others intact.
pub fn generate_corpus(
    spec: &TaskSpec,
    vocab: &Vocab,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
) -> Result<(Corpus, Corpus, Corpus)> {
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::config("every split needs at least one record"));
    }
    spec.validate(vocab)?;
    let labels = spec.label_map();
    Ok((
        generate_split(spec, &labels, Split::Train, n_train)?,
        generate_split(spec, &labels, Split::Valid, n_valid)?,
        generate_split(spec, &labels, Split::Test, n_test)?,
    ))
}

/// Encodes records for training; the target ends with the sentinel.
pub fn to_train_examples(c: &Corpus, vocab: &Vocab, mode: MaskMode) -> Result<Vec<TrainExample>> {
    c.records
        .iter()
        .map(|r| {
            let mut target = vocab.encode(&r.target)?;
            target.push(vocab.eos_id());
            let ex = TrainExample::new(vocab.encode(&r.instruction)?, vocab.encode(&r.input)?, target);
            Ok(ex.with_mask(vocab, mode))
        })
        .collect()
}

/// Removes every label string from `text` (the label-free CAD context).
pub fn strip_labels(text: &str, labels: &[String]) -> String {
    let mut sorted: Vec<&String> = labels.iter().collect();
    sorted.sort_by_key(|l| std::cmp::Reverse(l.len()));
    let mut out = text.to_string();
    for l in sorted {
        out = out.replace(l.as_str(), "");
    }
    out
}
