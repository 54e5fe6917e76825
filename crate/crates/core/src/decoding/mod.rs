//! Alternate contrastive decoding and the baseline decoders.
//!
//! [`alcd_next_token`] is one ALCD step: judge the role of the next token,
//! query all three sources, weight the specialists by their Jensen-Shannon
//! distance from the normal model, contrast them in the direction the role
//! asks for, and finally restrict the choice to the head-set intersection.

mod strategy;

pub use strategy::{decode, decode_with, Decoded, DecodeConfig, Sources, Strategy, StrategyParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{softmax, DecodeContext, LogitVector, ModelTriple, ProbVector};
use crate::roles::{next_token_role, TokenRole};

const NEG: f64 = f64::NEG_INFINITY;

/// Jensen-Shannon divergence in nats, bounded by `[0, ln 2]`.
pub fn jsd(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut acc = 0.0;
    for (&a, &b) in p.0.iter().zip(&q.0) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += a * (a / m).ln();
        }
        if b > 0.0 {
            acc += b * (b / m).ln();
        }
    }
    Ok((0.5 * acc).clamp(0.0, std::f64::consts::LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlcdParams {
    pub alpha: f64,
    pub beta: f64,
    pub constraint_enabled: bool,
}

impl Default for AlcdParams {
    fn default() -> Self {
        AlcdParams {
            alpha: 0.3,
            beta: 0.5,
            constraint_enabled: true,
        }
    }
}

impl AlcdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// How the three logit vectors are merged on a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    /// Enhance the role's specialist, contrast the other one.
    Alternate,
    /// Both contrast terms turned into additions.
    AlternateSum,
    /// `l_nl + α(d_cl·l_cl + d_id·l_id)` on every step, role ignored.
    WeightedSum,
}

/// `(d_id, d_cl)`: distance of each specialist from the normal model.
pub fn adaptive_scales(l_nl: &LogitVector, l_cl: &LogitVector, l_id: &LogitVector) -> Result<(f64, f64)> {
    let p_nl = softmax(l_nl)?;
    let d_id = jsd(&p_nl, &softmax(l_id)?)?;
    let d_cl = jsd(&p_nl, &softmax(l_cl)?)?;
    Ok((d_id, d_cl))
}

/// Weighted sum `Σ w_i · l_i`; a token is `-inf` if any source gives it `-inf`.
fn weighted(terms: &[(f64, &LogitVector)]) -> LogitVector {
    let n = terms[0].1.len();
    let out = (0..n)
        .map(|v| {
            if terms.iter().any(|(_, l)| l.0[v] == NEG) {
                return NEG;
            }
            terms.iter().map(|(w, l)| w * l.0[v]).sum()
        })
        .collect();
    LogitVector(out)
}

fn check_shapes(l_nl: &LogitVector, others: &[&LogitVector]) -> Result<()> {
    for l in others {
        l.ensure_len(l_nl.len())?;
    }
    Ok(())
}

/// Combines with precomputed scales. Zero weights are skipped entirely so
/// `alpha = 0` and the Other role return `l_nl` bit for bit.
pub fn combine_with_scales(
    rule: CombineRule,
    l_nl: &LogitVector,
    l_cl: &LogitVector,
    l_id: &LogitVector,
    role: TokenRole,
    alpha: f64,
    d_id: f64,
    d_cl: f64,
) -> Result<LogitVector> {
    check_shapes(l_nl, &[l_cl, l_id])?;
    let (w_cl, w_id) = match (rule, role) {
        (CombineRule::WeightedSum, _) => (alpha * d_cl, alpha * d_id),
        (_, TokenRole::Other) => (0.0, 0.0),
        (CombineRule::Alternate, TokenRole::Cls) => (alpha * d_cl, -alpha * d_id),
        (CombineRule::Alternate, TokenRole::Ide) => (-alpha * d_cl, alpha * d_id),
        (CombineRule::AlternateSum, _) => (alpha * d_cl, alpha * d_id),
    };
    let mut terms = vec![(1.0, l_nl)];
    if w_cl != 0.0 {
        terms.push((w_cl, l_cl));
    }
    if w_id != 0.0 {
        terms.push((w_id, l_id));
    }
    if terms.len() == 1 {
        return Ok(l_nl.clone());
    }
    Ok(weighted(&terms))
}

/// Role-dependent contrast of the three models' logits.
pub fn alcd_combine(
    l_nl: &LogitVector,
    l_cl: &LogitVector,
    l_id: &LogitVector,
    role: TokenRole,
    alpha: f64,
) -> Result<LogitVector> {
    check_shapes(l_nl, &[l_cl, l_id])?;
    if alpha == 0.0 || role == TokenRole::Other {
        return Ok(l_nl.clone());
    }
    let (d_id, d_cl) = adaptive_scales(l_nl, l_cl, l_id)?;
    combine_with_scales(CombineRule::Alternate, l_nl, l_cl, l_id, role, alpha, d_id, d_cl)
}

/// Sorted token ids whose probability is at least `beta` times the maximum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet {
    pub members: Vec<usize>,
}

impl HeadSet {
    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn intersect(&self, other: &HeadSet) -> HeadSet {
        HeadSet {
            members: self
                .members
                .iter()
                .copied()
                .filter(|&v| other.contains(v))
                .collect(),
        }
    }
}

pub fn head_set_of(p: &ProbVector, beta: f64) -> HeadSet {
    let max = p.0.iter().copied().fold(0.0, f64::max);
    let threshold = beta * max;
    HeadSet {
        members: (0..p.len())
            .filter(|&v| p.0[v] > 0.0 && p.0[v] >= threshold)
            .collect(),
    }
}

pub fn head_set(l: &LogitVector, beta: f64) -> Result<HeadSet> {
    Ok(head_set_of(&softmax(l)?, beta))
}

/// Outcome of the three-way head constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub head_nl: usize,
    pub head_cl: usize,
    pub head_id: usize,
    pub head_inter: usize,
    /// The intersection was empty and the normal model's head was used.
    pub fallback: bool,
    /// Tokens allowed to stay finite.
    pub allowed: HeadSet,
}

/// Sets every token outside `V_head^nl ∩ V_head^cl ∩ V_head^id` to `-inf`.
/// An empty intersection falls back to `V_head^nl`.
pub fn apply_intersection_constraint(
    l_combined: &LogitVector,
    l_nl: &LogitVector,
    l_cl: &LogitVector,
    l_id: &LogitVector,
    beta: f64,
) -> Result<(LogitVector, ConstraintReport)> {
    check_shapes(l_combined, &[l_nl, l_cl, l_id])?;
    let h_nl = head_set(l_nl, beta)?;
    let h_cl = head_set(l_cl, beta)?;
    let h_id = head_set(l_id, beta)?;
    let inter = h_nl.intersect(&h_cl).intersect(&h_id);
    let fallback = inter.is_empty();
    let allowed = if fallback { h_nl.clone() } else { inter.clone() };
    let out = LogitVector(
        (0..l_combined.len())
            .map(|v| if allowed.contains(v) { l_combined.0[v] } else { NEG })
            .collect(),
    );
    Ok((
        out,
        ConstraintReport {
            head_nl: h_nl.len(),
            head_cl: h_cl.len(),
            head_id: h_id.len(),
            head_inter: inter.len(),
            fallback,
            allowed,
        },
    ))
}

/// Everything recorded about one ALCD step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlcdStepTrace {
    pub role: TokenRole,
    pub d_id: f64,
    pub d_cl: f64,
    pub head_nl: usize,
    pub head_cl: usize,
    pub head_id: usize,
    pub head_inter: usize,
    pub fallback: bool,
    /// Top five adjusted logits, best first.
    pub top: Vec<(usize, f64)>,
    pub chosen: usize,
}

/// One ALCD step with the standard alternate contrast.
pub fn alcd_next_token(
    triple: &ModelTriple,
    ctx: &DecodeContext,
    params: &AlcdParams,
) -> Result<(usize, AlcdStepTrace)> {
    alcd_step(triple, ctx, params, CombineRule::Alternate)
}

/// One ALCD-family step under any combine rule.
pub fn alcd_step(
    triple: &ModelTriple,
    ctx: &DecodeContext,
    params: &AlcdParams,
    rule: CombineRule,
) -> Result<(usize, AlcdStepTrace)> {
    let role = next_token_role(&ctx.prefix, &triple.vocab);
    let l_nl = triple.normal.next_logits(ctx);
    let l_cl = triple.classification.next_logits(ctx);
    let l_id = triple.identification.next_logits(ctx);
    let (d_id, d_cl) = adaptive_scales(&l_nl, &l_cl, &l_id)?;
    let combined = combine_with_scales(rule, &l_nl, &l_cl, &l_id, role, params.alpha, d_id, d_cl)?;
    // α = 0 switches the specialists off entirely, head gating included
    let gated = params.constraint_enabled && role != TokenRole::Other && params.alpha != 0.0;
    let (adjusted, report) = if gated {
        let (l, r) = apply_intersection_constraint(&combined, &l_nl, &l_cl, &l_id, params.beta)?;
        (l, Some(r))
    } else {
        (combined, None)
    };
    // A surviving token can only be -inf when a tabular specialist hard-masks
    // it; fall back to the normal model's choice in that case.
    let chosen = adjusted
        .argmax()
        .or_else(|| l_nl.argmax())
        .ok_or(Error::DegenerateDistribution)?;
    let head = |f: fn(&ConstraintReport) -> usize| report.as_ref().map_or(0, f);
    let trace = AlcdStepTrace {
        role,
        d_id,
        d_cl,
        head_nl: head(|r| r.head_nl),
        head_cl: head(|r| r.head_cl),
        head_id: head(|r| r.head_id),
        head_inter: head(|r| r.head_inter),
        fallback: report.as_ref().is_some_and(|r| r.fallback),
        top: adjusted.top(5),
        chosen,
    };
    Ok((chosen, trace))
}
