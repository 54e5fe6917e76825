//! Masked-loss fine-tuning of [`TinyLm`] copies.
//!
//! The identification model never sees a gradient from classification
//! positions and vice versa; the normal model is trained on every position.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{log_softmax, DecodeContext, LogitVector};
use crate::roles::{build_mask, MaskMode, MaskSet};
use crate::tinylm::{Params, TinyLm};
use crate::vocab::{TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub instruction: TokenSeq,
    pub input: TokenSeq,
    pub target: TokenSeq,
    pub mask: MaskSet,
}

impl TrainExample {
    pub fn new(instruction: TokenSeq, input: TokenSeq, target: TokenSeq) -> Self {
        TrainExample {
            instruction,
            input,
            target,
            mask: MaskSet::default(),
        }
    }

    pub fn with_mask(&self, vocab: &Vocab, mode: MaskMode) -> TrainExample {
        TrainExample {
            mask: build_mask(&self.target, vocab, mode),
            ..self.clone()
        }
    }

    fn context(&self, t: usize) -> DecodeContext {
        DecodeContext::new(
            self.instruction.clone(),
            self.input.clone(),
            self.target[..t].to_vec(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mask_mode: MaskMode,
    #[serde(default)]
    pub momentum: f64,
}

impl TrainConfig {
    pub fn new(mask_mode: MaskMode) -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            learning_rate: 0.1,
            seed: 0,
            mask_mode,
            momentum: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("train steps must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Sum of `-log p(target[t])` over unmasked positions.
pub fn masked_nll(model: &TinyLm, ex: &TrainExample) -> f64 {
    masked_nll_against(model, ex, &ex.target)
}

/// Masked NLL of the teacher-forced contexts of `ex`, scored against `gold`
/// instead of `ex.target`. Only `gold` at unmasked positions is read.
pub fn masked_nll_against(model: &TinyLm, ex: &TrainExample, gold: &[usize]) -> f64 {
    let mut loss = 0.0;
    for t in 0..ex.target.len() {
        if ex.mask.contains(t) {
            continue;
        }
        let logits = LogitVector(model.forward_window(model.window(&ex.context(t))).logits);
        let lp = log_softmax(&logits).expect("model logits are finite");
        loss -= lp[gold[t]];
    }
    loss
}

/// Masked NLL and its gradient, accumulated into `grad` scaled by `scale`.
pub fn masked_nll_grad(model: &TinyLm, ex: &TrainExample, scale: f64, grad: &mut Params) -> f64 {
    masked_nll_grad_against(model, ex, &ex.target, scale, grad)
}

pub fn masked_nll_grad_against(
    model: &TinyLm,
    ex: &TrainExample,
    gold: &[usize],
    scale: f64,
    grad: &mut Params,
) -> f64 {
    let mut loss = 0.0;
    for t in 0..ex.target.len() {
        if ex.mask.contains(t) {
            continue;
        }
        let fwd = model.forward_window(model.window(&ex.context(t)));
        let lp = log_softmax(&LogitVector(fwd.logits.clone())).expect("model logits are finite");
        let g = gold[t];
        loss -= lp[g];
        let mut dlogits: Vec<f64> = lp.iter().map(|x| scale * x.exp()).collect();
        dlogits[g] -= scale;
        model.backward(&fwd, &dlogits, grad);
    }
    loss
}

/// Mean masked NLL of a batch and its gradient.
pub fn batch_loss_grad(model: &TinyLm, batch: &[TrainExample]) -> (f64, Params) {
    let mut grad = Params::zeros(model.dims());
    let scale = 1.0 / batch.len() as f64;
    let loss: f64 = batch
        .iter()
        .map(|ex| masked_nll_grad(model, ex, scale, &mut grad))
        .sum();
    (loss * scale, grad)
}

/// One plain gradient-descent update on the mean masked NLL of `batch`.
/// Returns the pre-update batch loss.
pub fn sgd_step(model: &mut TinyLm, batch: &[TrainExample], lr: f64) -> Result<f64> {
    Trainer::new(lr, 0.0).step(model, batch)
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Trainer {
    lr: f64,
    momentum: f64,
    velocity: Option<Params>,
}

impl Trainer {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Trainer {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut TinyLm, batch: &[TrainExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let step = model.steps() + 1;
        let (loss, grad) = batch_loss_grad(model, batch);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, what: "loss" });
        }
        if !grad.all_finite() {
            return Err(Error::Divergence { step, what: "gradient" });
        }
        let update = if self.momentum > 0.0 {
            let v = self.velocity.get_or_insert_with(|| Params::zeros(model.dims()));
            v.scale(self.momentum);
            v.add_scaled(&grad, 1.0);
            v.clone()
        } else {
            grad
        };
        model.params_mut().add_scaled(&update, -self.lr);
        if !model.params().all_finite() {
            return Err(Error::Divergence { step, what: "parameters" });
        }
        model.set_steps(step);
        Ok(loss)
    }
}

/// Deterministic epoch-shuffled batch order: reshuffles whenever a pass over
/// the data completes.
pub struct BatchOrder {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    pub fn new(n: usize, seed: u64) -> Self {
        BatchOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: (0..n).collect(),
            cursor: n,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.perm.len() {
                self.perm.sort_unstable();
                self.perm.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.perm[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: TinyLm,
    /// (step, pre-update batch loss)
    pub losses: Vec<(u64, f64)>,
    /// Snapshots at step 0, every `checkpoint_every` steps, and the final step.
    pub checkpoints: Vec<TinyLm>,
}

impl TrainRun {
    pub fn checkpoint_at(&self, step: u64) -> Option<&TinyLm> {
        self.checkpoints.iter().find(|m| m.steps() == step)
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Trains one model on `corpus` with the mask the config asks for.
pub fn finetune(
    corpus: &[TrainExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    init: &TinyLm,
    checkpoint_every: u64,
) -> Result<TrainRun> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("empty training corpus"));
    }
    let examples: Vec<TrainExample> = corpus
        .iter()
        .map(|ex| ex.with_mask(vocab, cfg.mask_mode))
        .collect();
    let mut model = init.clone();
    model.set_steps(0);
    let mut order = BatchOrder::new(examples.len(), cfg.seed);
    let mut trainer = Trainer::new(cfg.learning_rate, cfg.momentum);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let mut checkpoints = vec![model.clone()];
    for _ in 0..cfg.steps {
        let batch: Vec<TrainExample> = order
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let loss = trainer.step(&mut model, &batch)?;
        losses.push((model.steps(), loss));
        let step = model.steps();
        if (checkpoint_every > 0 && step % checkpoint_every == 0) || step == cfg.steps {
            checkpoints.push(model.clone());
        }
    }
    Ok(TrainRun {
        model,
        losses,
        checkpoints,
    })
}

#[derive(Debug, Clone)]
pub struct TripleRun {
    pub normal: TrainRun,
    pub classification: TrainRun,
    pub identification: TrainRun,
}

/// Trains M_nl (no mask), M_cl (identification positions masked) and M_id
/// (classification positions masked) from one shared initialization, in
/// parallel. All three share one data order.
pub fn finetune_triple(
    corpus: &[TrainExample],
    vocab: &Vocab,
    cfg_nl: &TrainConfig,
    cfg_cl: &TrainConfig,
    cfg_id: &TrainConfig,
    init: &TinyLm,
    checkpoint_every: u64,
) -> Result<TripleRun> {
    let expect = [
        (cfg_nl, MaskMode::NoMask, "normal"),
        (cfg_cl, MaskMode::MaskIdentification, "classification"),
        (cfg_id, MaskMode::MaskClassification, "identification"),
    ];
    for (cfg, mode, name) in expect {
        cfg.validate()?;
        if cfg.mask_mode != mode {
            return Err(Error::config(format!("{name} model must train with {mode:?}")));
        }
    }
    if cfg_cl.seed != cfg_nl.seed || cfg_id.seed != cfg_nl.seed {
        return Err(Error::config("the three models must share one data-order seed"));
    }
    let (normal, (classification, identification)) = rayon::join(
        || finetune(corpus, vocab, cfg_nl, init, checkpoint_every),
        || {
            rayon::join(
                || finetune(corpus, vocab, cfg_cl, init, checkpoint_every),
                || finetune(corpus, vocab, cfg_id, init, checkpoint_every),
            )
        },
    );
    Ok(TripleRun {
        normal: normal?,
        classification: classification?,
        identification: identification?,
    })
}
