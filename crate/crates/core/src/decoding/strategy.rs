use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{alcd_step, head_set, weighted, AlcdParams, AlcdStepTrace, CombineRule};
use crate::error::{Error, Result};
use crate::logits::{log_softmax, softmax, DecodeContext, LogitSource, LogitVector, ModelTriple};
use crate::vocab::TokenSeq;

const NEG: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
    TopK { k: usize },
    Nucleus { p: f64 },
    /// Full context against a context holding only the last input token.
    Cfg { gamma: f64 },
    /// Full context against the harness-supplied label-free context.
    Cad { gamma: f64 },
    /// Final normal checkpoint against an earlier (amateur) checkpoint.
    Cd { lambda: f64, beta: f64 },
    Alcd(AlcdParams),
    NoConstraint(AlcdParams),
    AlternateSum(AlcdParams),
    WeightedSum(AlcdParams),
}

/// Flat parameter bag used to build a [`Strategy`] from its id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub beam_width: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub cfg_gamma: f64,
    pub cad_gamma: f64,
    pub cd_lambda: f64,
    pub cd_beta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            beam_width: 4,
            top_k: 5,
            top_p: 0.9,
            cfg_gamma: 0.5,
            cad_gamma: 0.5,
            cd_lambda: 0.5,
            cd_beta: 0.1,
            alpha: 0.3,
            beta: 0.5,
        }
    }
}

impl Strategy {
    pub const IDS: [&'static str; 11] = [
        "greedy",
        "beam",
        "top-k",
        "nucleus",
        "cfg",
        "cad",
        "cd",
        "alcd",
        "no-constraint",
        "alternate-sum",
        "weighted-sum",
    ];

    pub fn from_id(id: &str, p: &StrategyParams) -> Result<Self> {
        let alcd = AlcdParams {
            alpha: p.alpha,
            beta: p.beta,
            constraint_enabled: true,
        };
        let s = match id {
            "greedy" => Strategy::Greedy,
            "beam" => Strategy::Beam { width: p.beam_width },
            "top-k" => Strategy::TopK { k: p.top_k },
            "nucleus" => Strategy::Nucleus { p: p.top_p },
            "cfg" => Strategy::Cfg { gamma: p.cfg_gamma },
            "cad" => Strategy::Cad { gamma: p.cad_gamma },
            "cd" => Strategy::Cd {
                lambda: p.cd_lambda,
                beta: p.cd_beta,
            },
            "alcd" => Strategy::Alcd(alcd),
            "no-constraint" => Strategy::NoConstraint(AlcdParams {
                constraint_enabled: false,
                ..alcd
            }),
            "alternate-sum" => Strategy::AlternateSum(alcd),
            // role-blind: no role-gated constraint either
            "weighted-sum" => Strategy::WeightedSum(AlcdParams {
                constraint_enabled: false,
                ..alcd
            }),
            other => return Err(Error::UnknownStrategy(other.to_string())),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam { .. } => "beam",
            Strategy::TopK { .. } => "top-k",
            Strategy::Nucleus { .. } => "nucleus",
            Strategy::Cfg { .. } => "cfg",
            Strategy::Cad { .. } => "cad",
            Strategy::Cd { .. } => "cd",
            Strategy::Alcd(_) => "alcd",
            Strategy::NoConstraint(_) => "no-constraint",
            Strategy::AlternateSum(_) => "alternate-sum",
            Strategy::WeightedSum(_) => "weighted-sum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Beam { width } if width == 0 => Err(Error::config("beam width must be >= 1")),
            Strategy::TopK { k } if k == 0 => Err(Error::config("top-k k must be >= 1")),
            Strategy::Nucleus { p } if !(p > 0.0 && p <= 1.0) => {
                Err(Error::config("nucleus p must be in (0, 1]"))
            }
            Strategy::Cfg { gamma } | Strategy::Cad { gamma } if !gamma.is_finite() => {
                Err(Error::config("gamma must be finite"))
            }
            Strategy::Cd { lambda, beta } => {
                if !lambda.is_finite() || !(0.0..=1.0).contains(&beta) {
                    Err(Error::config("cd needs finite lambda and beta in [0, 1]"))
                } else {
                    Ok(())
                }
            }
            Strategy::Alcd(p)
            | Strategy::NoConstraint(p)
            | Strategy::AlternateSum(p)
            | Strategy::WeightedSum(p) => p.validate(),
            _ => Ok(()),
        }
    }

    /// Combine rule and parameters for the ALCD family.
    /// Combine rule and parameters of the ALCD family, `None` otherwise.
    pub fn alcd(&self) -> Option<(CombineRule, AlcdParams)> {
        match *self {
            Strategy::Alcd(p) => Some((CombineRule::Alternate, p)),
            Strategy::NoConstraint(p) => Some((
                CombineRule::Alternate,
                AlcdParams {
                    constraint_enabled: false,
                    ..p
                },
            )),
            Strategy::AlternateSum(p) => Some((CombineRule::AlternateSum, p)),
            Strategy::WeightedSum(p) => Some((CombineRule::WeightedSum, p)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_length: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DecodeConfig {
    pub fn new(strategy: Strategy, max_length: usize) -> Self {
        DecodeConfig {
            strategy,
            max_length,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::config("max_length must be >= 1"));
        }
        self.strategy.validate()
    }
}

/// The models a decoder may consult.
#[derive(Clone)]
pub struct Sources {
    pub triple: ModelTriple,
    /// Amateur for the CD baseline.
    pub amateur: Option<Arc<dyn LogitSource>>,
}

impl std::fmt::Debug for Sources {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sources")
            .field("triple", &self.triple)
            .field("amateur", &self.amateur.is_some())
            .finish()
    }
}

impl Sources {
    pub fn new(triple: ModelTriple) -> Self {
        Sources {
            triple,
            amateur: None,
        }
    }

    pub fn with_amateur(mut self, amateur: Arc<dyn LogitSource>) -> Self {
        self.amateur = Some(amateur);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Generated ids; ends with the sentinel when generation terminated.
    pub tokens: TokenSeq,
    /// Per-step traces for the ALCD family, empty otherwise.
    pub traces: Vec<AlcdStepTrace>,
}

impl Decoded {
    /// Tokens before the sentinel.
    pub fn body(&self, eos: usize) -> &[usize] {
        match self.tokens.iter().position(|&t| t == eos) {
            Some(i) => &self.tokens[..i],
            None => &self.tokens,
        }
    }
}

pub fn decode(sources: &Sources, ctx0: &DecodeContext, cfg: &DecodeConfig) -> Result<Decoded> {
    decode_with(sources, ctx0, None, cfg)
}

/// Decodes from `ctx0`. `ablated` is the label-free context the CAD baseline
/// contrasts against; its prefix is ignored.
pub fn decode_with(
    sources: &Sources,
    ctx0: &DecodeContext,
    ablated: Option<&DecodeContext>,
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    let vocab = &sources.triple.vocab;
    ctx0.validate(vocab)?;
    let eos = vocab.eos_id();
    if let Strategy::Beam { width } = cfg.strategy {
        return beam(&*sources.triple.normal, ctx0, width, cfg.max_length, eos);
    }
    let normal = &*sources.triple.normal;
    let cfg_ctx = |ctx: &DecodeContext| DecodeContext {
        instruction: ctx.instruction.clone(),
        input: ctx.input.last().map(|&t| vec![t]).unwrap_or_default(),
        prefix: ctx.prefix.clone(),
    };
    if matches!(cfg.strategy, Strategy::Cad { .. }) && ablated.is_none() {
        return Err(Error::config("cad needs an ablated context"));
    }
    if matches!(cfg.strategy, Strategy::Cd { .. }) && sources.amateur.is_none() {
        return Err(Error::config("cd needs an amateur checkpoint"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ctx = ctx0.clone();
    let mut traces = Vec::new();
    let mut generated = Vec::new();
    while generated.len() < cfg.max_length {
        let token = if let Some((rule, params)) = cfg.strategy.alcd() {
            let (tok, trace) = alcd_step(&sources.triple, &ctx, &params, rule)?;
            traces.push(trace);
            tok
        } else {
            let l = normal.next_logits(&ctx);
            match cfg.strategy {
                Strategy::Greedy => argmax(&l)?,
                Strategy::TopK { k } => sample_top_k(&l, k, &mut rng)?,
                Strategy::Nucleus { p } => sample_nucleus(&l, p, &mut rng)?,
                Strategy::Cfg { gamma } => {
                    let weak = normal.next_logits(&cfg_ctx(&ctx));
                    argmax(&weighted(&[(1.0 + gamma, &l), (-gamma, &weak)]))?
                }
                Strategy::Cad { gamma } => {
                    let base = ablated.expect("checked above");
                    let weak = normal.next_logits(&base.with_prefix(ctx.prefix.clone()));
                    argmax(&weighted(&[(1.0 + gamma, &l), (-gamma, &weak)]))?
                }
                Strategy::Cd { lambda, beta } => {
                    let amateur = sources.amateur.as_ref().expect("checked above");
                    let weak = amateur.next_logits(&ctx);
                    let contrast = weighted(&[(1.0, &l), (-lambda, &weak)]);
                    let head = head_set(&l, beta)?;
                    let cut = LogitVector(
                        (0..l.len())
                            .map(|v| if head.contains(v) { contrast.0[v] } else { NEG })
                            .collect(),
                    );
                    argmax(&cut).or_else(|_| argmax(&l))?
                }
                Strategy::Beam { .. }
                | Strategy::Alcd(_)
                | Strategy::NoConstraint(_)
                | Strategy::AlternateSum(_)
                | Strategy::WeightedSum(_) => unreachable!("dispatched above"),
            }
        };
        generated.push(token);
        ctx.prefix.push(token);
        if token == eos {
            break;
        }
    }
    Ok(Decoded {
        tokens: generated,
        traces,
    })
}

fn argmax(l: &LogitVector) -> Result<usize> {
    l.argmax().ok_or(Error::DegenerateDistribution)
}

/// Draws an index from unnormalized non-negative weights over `ids`.
fn draw(ids: &[usize], weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&id, &w) in ids.iter().zip(weights) {
        if u < w {
            return id;
        }
        u -= w;
    }
    *ids.last().expect("nonempty candidate set")
}

/// Token ids sorted by descending probability, ties to the lower id.
fn ranked(p: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).filter(|&v| p[v] > 0.0).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids
}

fn sample_top_k(l: &LogitVector, k: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    let p = softmax(l)?.0;
    let ids: Vec<usize> = ranked(&p).into_iter().take(k).collect();
    let w: Vec<f64> = ids.iter().map(|&v| p[v]).collect();
    Ok(draw(&ids, &w, rng))
}

fn sample_nucleus(l: &LogitVector, top_p: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let p = softmax(l)?.0;
    let mut ids = Vec::new();
    let mut mass = 0.0;
    for v in ranked(&p) {
        ids.push(v);
        mass += p[v];
        if mass >= top_p {
            break;
        }
    }
    let w: Vec<f64> = ids.iter().map(|&v| p[v]).collect();
    Ok(draw(&ids, &w, rng))
}

#[derive(Clone)]
struct Hyp {
    tokens: TokenSeq,
    score: f64,
}

/// Beam search over summed log-probabilities of the normal model.
///
/// Each step keeps the `width` best expansions overall; expansions ending in
/// the sentinel leave the beam as finished hypotheses. Hypotheses still alive
/// at `max_length` are finished as well. The best finished score wins.
fn beam(
    model: &dyn LogitSource,
    ctx0: &DecodeContext,
    width: usize,
    max_length: usize,
    eos: usize,
) -> Result<Decoded> {
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_length {
        let mut candidates: Vec<Hyp> = Vec::new();
        for h in &alive {
            let mut prefix = ctx0.prefix.clone();
            prefix.extend_from_slice(&h.tokens);
            let lp = log_softmax(&model.next_logits(&ctx0.with_prefix(prefix)))?;
            for (v, &x) in lp.iter().enumerate() {
                if x == NEG {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(v);
                candidates.push(Hyp {
                    tokens,
                    score: h.score + x,
                });
            }
        }
        // stable: parents are already ranked and tokens come in id order
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        candidates.truncate(width);
        alive.clear();
        for c in candidates {
            if c.tokens.last() == Some(&eos) {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    finished.extend(alive);
    let best = finished
        .into_iter()
        .reduce(|a, b| if b.score.total_cmp(&a.score) == Ordering::Greater { b } else { a })
        .ok_or(Error::DegenerateDistribution)?;
    Ok(Decoded {
        tokens: best.tokens,
        traces: Vec::new(),
    })
}
