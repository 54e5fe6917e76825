//! Parsing of generated answers, micro-F1 and the hallucination breakdown.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Pair = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedPrediction {
    /// Deduplicated, first occurrence kept.
    pub pairs: Vec<Pair>,
    /// Nonempty lines without a colon.
    pub anomalies: usize,
}

/// Splits on newlines, then each line at its first colon. Both sides are
/// whitespace-trimmed.
pub fn parse_output(text: &str) -> ParsedPrediction {
    let mut out = ParsedPrediction::default();
    let mut seen = HashSet::new();
    for line in text.split('\n') {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once(':') {
            Some((m, l)) => {
                let pair = (m.trim().to_string(), l.trim().to_string());
                if seen.insert(pair.clone()) {
                    out.pairs.push(pair);
                }
            }
            None => out.anomalies += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn micro_counts(preds: &[ParsedPrediction], golds: &[Vec<Pair>]) -> Result<Counts> {
    if preds.len() != golds.len() {
        return Err(Error::Shape {
            expected: golds.len(),
            got: preds.len(),
        });
    }
    let mut c = Counts::default();
    for (p, g) in preds.iter().zip(golds) {
        let gold: HashSet<&Pair> = g.iter().collect();
        let pred: HashSet<&Pair> = p.pairs.iter().collect();
        let tp = pred.intersection(&gold).count();
        c.tp += tp;
        c.fp += pred.len() - tp;
        c.fn_ += gold.len() - tp;
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCategory {
    Correct,
    /// Mention is not a substring of the input.
    IdentificationNotExist,
    /// Mention occurs in the input but is not a gold mention.
    IdentificationPredWrong,
    /// Gold mention with the wrong label.
    ClassificationPredWrong,
}

pub fn categorize(pair: &Pair, gold: &[Pair], input: &str) -> PairCategory {
    let (mention, label) = pair;
    let gold_labels: Vec<&String> = gold.iter().filter(|(m, _)| m == mention).map(|(_, l)| l).collect();
    if gold_labels.is_empty() {
        if input.contains(mention.as_str()) {
            PairCategory::IdentificationPredWrong
        } else {
            PairCategory::IdentificationNotExist
        }
    } else if gold_labels.contains(&label) {
        PairCategory::Correct
    } else {
        PairCategory::ClassificationPredWrong
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HallucinationRates {
    pub identification_not_exist: f64,
    pub identification_pred_wrong: f64,
    pub classification_pred_wrong: f64,
    pub predicted_pairs: usize,
}

pub fn hallucination_breakdown(
    preds: &[ParsedPrediction],
    golds: &[Vec<Pair>],
    inputs: &[&str],
) -> Result<HallucinationRates> {
    if preds.len() != golds.len() || preds.len() != inputs.len() {
        return Err(Error::Shape {
            expected: golds.len(),
            got: preds.len(),
        });
    }
    let (mut not_exist, mut ident, mut cls, mut total) = (0, 0, 0, 0);
    for ((p, g), input) in preds.iter().zip(golds).zip(inputs) {
        for pair in &p.pairs {
            total += 1;
            match categorize(pair, g, input) {
                PairCategory::Correct => {}
                PairCategory::IdentificationNotExist => not_exist += 1,
                PairCategory::IdentificationPredWrong => ident += 1,
                PairCategory::ClassificationPredWrong => cls += 1,
            }
        }
    }
    Ok(HallucinationRates {
        identification_not_exist: ratio(not_exist, total),
        identification_pred_wrong: ratio(ident, total),
        classification_pred_wrong: ratio(cls, total),
        predicted_pairs: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub anomalies: usize,
    pub identification_not_exist: f64,
    pub identification_pred_wrong: f64,
    pub classification_pred_wrong: f64,
    pub predicted_pairs: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "records,precision,recall,f1,tp,fp,fn,anomalies,identification_not_exist,identification_pred_wrong,classification_pred_wrong,predicted_pairs";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.records,
            self.precision,
            self.recall,
            self.f1,
            self.tp,
            self.fp,
            self.fn_,
            self.anomalies,
            self.identification_not_exist,
            self.identification_pred_wrong,
            self.classification_pred_wrong,
            self.predicted_pairs
        )
    }
}

/// Micro precision/recall/F1 only; hallucination rates stay zero.
pub fn micro_f1(preds: &[ParsedPrediction], golds: &[Vec<Pair>]) -> Result<EvalReport> {
    let c = micro_counts(preds, golds)?;
    Ok(EvalReport {
        records: preds.len(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        anomalies: preds.iter().map(|p| p.anomalies).sum(),
        identification_not_exist: 0.0,
        identification_pred_wrong: 0.0,
        classification_pred_wrong: 0.0,
        predicted_pairs: preds.iter().map(|p| p.pairs.len()).sum(),
    })
}

/// Micro-F1 plus the hallucination breakdown.
pub fn evaluate(preds: &[ParsedPrediction], golds: &[Vec<Pair>], inputs: &[&str]) -> Result<EvalReport> {
    let mut r = micro_f1(preds, golds)?;
    let h = hallucination_breakdown(preds, golds, inputs)?;
    r.identification_not_exist = h.identification_not_exist;
    r.identification_pred_wrong = h.identification_pred_wrong;
    r.classification_pred_wrong = h.classification_pred_wrong;
    Ok(r)
}
