//! Config-driven experiment pipeline: generate, train, decode, evaluate,
//! grid search, ablation and the specialist-steps sweep.
//!
//! Everything lands under `out_dir`:
//!
//! ```text
//! data/{train,valid,test}.jsonl  vocab.json
//! checkpoints/{normal,classification,identification}/step-NNNNN.json
//! losses/{normal,classification,identification}.csv
//! outputs/<tag>.jsonl  traces/<tag>.jsonl  reports/<tag>.json  reports/<command>.csv
//! plots/*.tsv  manifests/<command>.json
//! ```
//!
//! Reports hold no timings, so a rerun with the same config reproduces them
//! byte for byte; wall-clock numbers go to the manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{generate_corpus, strip_labels, to_train_examples, Corpus, MieRecord, Split, TaskSpec};
use crate::decoding::{decode_with, AlcdParams, AlcdStepTrace, DecodeConfig, Sources, Strategy, StrategyParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, parse_output, EvalReport, Pair};
use crate::logits::{DecodeContext, LogitSource, ModelTriple};
use crate::roles::{MaskMode, TokenRole};
use crate::tinylm::{TinyLm, TinyLmDims};
use crate::train::{finetune, finetune_triple, TrainConfig, TripleRun};
use crate::vocab::Vocab;

pub const ENV_OUT_DIR: &str = "ALCD_OUT_DIR";
pub const ENV_THREADS: &str = "ALCD_THREADS";

pub const ALPHA_GRID: [f64; 6] = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const BETA_GRID: [f64; 6] = [0.4, 0.45, 0.5, 0.55, 0.6, 0.65];

/// The specialists the ablation compares.
pub const ABLATION: [&str; 4] = ["alcd", "no-constraint", "alternate-sum", "weighted-sum"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 2000,
            valid: 200,
            test: 200,
        }
    }
}

impl SplitSizes {
    /// Full-size 4600/400/400 split.
    pub const FULL: SplitSizes = SplitSizes {
        train: 4600,
        valid: 400,
        test: 400,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub context_window: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = TinyLmDims::with_vocab(1);
        ModelConfig {
            context_window: d.context_window,
            embedding_dim: d.embedding_dim,
            hidden_dim: d.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let c = TrainConfig::new(MaskMode::NoMask);
        TrainSpec {
            steps: c.steps,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
        }
    }
}

impl TrainSpec {
    fn config(&self, mode: MaskMode, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            mask_mode: mode,
            momentum: self.momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripleTrain {
    pub normal: TrainSpec,
    pub classification: TrainSpec,
    pub identification: TrainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub max_length: usize,
    pub params: StrategyParams,
    /// Strategy ids `eval` runs when none are named.
    pub strategies: Vec<String>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            max_length: 64,
            params: StrategyParams::default(),
            strategies: Strategy::IDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn default_checkpoint_every() -> u64 {
    100
}

fn default_alpha_grid() -> Vec<f64> {
    ALPHA_GRID.to_vec()
}

fn default_beta_grid() -> Vec<f64> {
    BETA_GRID.to_vec()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Task spec path, relative to the config file.
    pub task: PathBuf,
    /// Extra characters for the vocabulary beyond what the task uses.
    #[serde(default)]
    pub alphabet: Option<String>,
    #[serde(default)]
    pub splits: SplitSizes,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TripleTrain,
    /// Shared unmasked pretraining of the backbone before the triple
    /// fine-tunes from it.
    #[serde(default)]
    pub warmup: Option<TrainSpec>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    /// Specialist checkpoints for `sweep-steps`; empty means all of them.
    #[serde(default)]
    pub sweep_steps: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(task: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            task: task.into(),
            alphabet: None,
            splits: SplitSizes::default(),
            model: ModelConfig::default(),
            train: TripleTrain::default(),
            warmup: None,
            checkpoint_every: default_checkpoint_every(),
            decode: DecodeSection::default(),
            alpha_grid: default_alpha_grid(),
            beta_grid: default_beta_grid(),
            sweep_steps: Vec::new(),
            out_dir: default_out_dir(),
            seed: 0,
            threads: None,
        }
    }

    /// Reads a config and resolves `task` against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if cfg.task.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.task = dir.join(&cfg.task);
            }
        }
        Ok(cfg)
    }

    /// `ALCD_OUT_DIR` and `ALCD_THREADS` override the file.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
        if let Ok(n) = std::env::var(ENV_THREADS) {
            let n: usize = n
                .parse()
                .map_err(|_| Error::config(format!("{ENV_THREADS} must be a positive integer, got {n:?}")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::config("alpha_grid and beta_grid must be nonempty"));
        }
        if self.splits.train == 0 || self.splits.valid == 0 || self.splits.test == 0 {
            return Err(Error::config("every split needs at least one record"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        let half = self.train.normal.steps / 2;
        if half % self.checkpoint_every != 0 {
            return Err(Error::config(format!(
                "checkpoint_every ({}) must divide half the normal model's steps ({half}); the cd baseline needs that checkpoint",
                self.checkpoint_every
            )));
        }
        for s in &self.sweep_steps {
            let max = self.train.classification.steps.min(self.train.identification.steps);
            if *s > max || (s % self.checkpoint_every != 0 && *s != max) {
                return Err(Error::config(format!("sweep step {s} is not a saved specialist checkpoint")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be >= 1"));
        }
        if !self.task.exists() {
            return Err(Error::MissingArtifact(self.task.clone()));
        }
        for a in self.alpha_grid.iter().chain(&self.beta_grid) {
            if !a.is_finite() {
                return Err(Error::config("grid values must be finite"));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.out_dir.clone(),
        }
    }
}

/// Named sub-seeds, each a hash of the global seed and its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub init: u64,
    pub warmup: u64,
    /// Data order shared by all three models.
    pub train: u64,
    pub decode: u64,
}

pub fn sub_seed(global: u64, name: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}/{name}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Seeds {
    pub fn derive(global: u64) -> Self {
        Seeds {
            corpus: sub_seed(global, "corpus"),
            init: sub_seed(global, "init"),
            warmup: sub_seed(global, "warmup"),
            train: sub_seed(global, "train"),
            decode: sub_seed(global, "decode"),
        }
    }

    fn map(&self) -> BTreeMap<String, u64> {
        [
            ("corpus", self.corpus),
            ("init", self.init),
            ("warmup", self.warmup),
            ("train", self.train),
            ("decode", self.decode),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn split(&self, s: Split) -> PathBuf {
        self.root.join("data").join(format!("{}.jsonl", s.name()))
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn checkpoint(&self, model: &str, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(model).join(format!("step-{step:05}.json"))
    }

    pub fn losses(&self, model: &str) -> PathBuf {
        self.root.join("losses").join(format!("{model}.csv"))
    }

    pub fn outputs(&self, tag: &str) -> PathBuf {
        self.root.join("outputs").join(format!("{tag}.jsonl"))
    }

    pub fn traces(&self, tag: &str) -> PathBuf {
        self.root.join("traces").join(format!("{tag}.jsonl"))
    }

    pub fn report(&self, tag: &str) -> PathBuf {
        self.root.join("reports").join(format!("{tag}.json"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds().map(),
            artifacts: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn add(&mut self, path: PathBuf) -> Result<()> {
        let sha256 = file_sha256(&path)?;
        self.artifacts.push(Artifact { path, sha256 });
        Ok(())
    }

    fn time<T>(&mut self, what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings_ms.insert(what.to_string(), start.elapsed().as_millis());
        Ok(out)
    }

    fn finish(self, cfg: &ExperimentConfig) -> Result<RunManifest> {
        write_json(&cfg.layout().manifest(&self.command), &self)?;
        Ok(self)
    }

    /// Checks that every artifact exists and still has its recorded hash.
    pub fn verify(&self) -> Result<()> {
        for a in &self.artifacts {
            if !a.path.exists() {
                return Err(Error::MissingArtifact(a.path.clone()));
            }
            if file_sha256(&a.path)? != a.sha256 {
                return Err(Error::config(format!("{} changed since the manifest was written", a.path.display())));
            }
        }
        Ok(())
    }
}

/// Corpora and vocabulary for one experiment.
#[derive(Debug, Clone)]
pub struct Data {
    pub task: TaskSpec,
    pub vocab: Arc<Vocab>,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

impl Data {
    pub fn split(&self, s: Split) -> &Corpus {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

pub fn build_vocab(task: &TaskSpec, extra: Option<&str>) -> Result<Vocab> {
    let mut chars = task.alphabet();
    if let Some(e) = extra {
        chars.extend(e.chars());
    }
    Vocab::build(chars)
}

/// Generates the corpora in memory. The task's own seed is mixed with the
/// global corpus sub-seed.
pub fn generate(cfg: &ExperimentConfig) -> Result<Data> {
    let mut task = TaskSpec::from_file(&cfg.task)?;
    let vocab = build_vocab(&task, cfg.alphabet.as_deref())?;
    task.seed ^= cfg.seeds().corpus;
    let (train, valid, test) = generate_corpus(&task, &vocab, cfg.splits.train, cfg.splits.valid, cfg.splits.test)?;
    Ok(Data {
        task,
        vocab: Arc::new(vocab),
        train,
        valid,
        test,
    })
}

pub fn model_dims(cfg: &ExperimentConfig, vocab: &Vocab) -> TinyLmDims {
    TinyLmDims {
        vocab_size: vocab.len(),
        context_window: cfg.model.context_window,
        embedding_dim: cfg.model.embedding_dim,
        hidden_dim: cfg.model.hidden_dim,
    }
}

/// Fine-tunes the triple from one shared initialization.
pub fn train_models(cfg: &ExperimentConfig, data: &Data) -> Result<TripleRun> {
    let seeds = cfg.seeds();
    let mut init = TinyLm::init(&data.vocab, model_dims(cfg, &data.vocab), seeds.init)?;
    let corpus = to_train_examples(&data.train, &data.vocab, MaskMode::NoMask)?;
    if let Some(w) = &cfg.warmup {
        let wc = w.config(MaskMode::NoMask, seeds.warmup);
        init = finetune(&corpus, &data.vocab, &wc, &init, 0)?.model;
    }
    finetune_triple(
        &corpus,
        &data.vocab,
        &cfg.train.normal.config(MaskMode::NoMask, seeds.train),
        &cfg.train.classification.config(MaskMode::MaskIdentification, seeds.train),
        &cfg.train.identification.config(MaskMode::MaskClassification, seeds.train),
        &init,
        cfg.checkpoint_every,
    )
}

/// Frozen models a decoding run needs.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    pub normal: Arc<TinyLm>,
    pub classification: Arc<TinyLm>,
    pub identification: Arc<TinyLm>,
    pub amateur: Arc<TinyLm>,
}

impl Checkpoints {
    pub fn from_run(run: &TripleRun) -> Result<Self> {
        let half = run.normal.model.steps() / 2;
        let amateur = run
            .normal
            .checkpoint_at(half)
            .ok_or_else(|| Error::config(format!("no normal checkpoint at step {half}")))?;
        Ok(Checkpoints {
            normal: Arc::new(run.normal.model.clone()),
            classification: Arc::new(run.classification.model.clone()),
            identification: Arc::new(run.identification.model.clone()),
            amateur: Arc::new(amateur.clone()),
        })
    }

    pub fn with_specialists(&self, classification: TinyLm, identification: TinyLm) -> Self {
        Checkpoints {
            classification: Arc::new(classification),
            identification: Arc::new(identification),
            ..self.clone()
        }
    }

    pub fn sources(&self, vocab: Arc<Vocab>) -> Result<Sources> {
        let triple = ModelTriple::new(
            vocab,
            self.normal.clone() as Arc<dyn LogitSource>,
            self.classification.clone() as Arc<dyn LogitSource>,
            self.identification.clone() as Arc<dyn LogitSource>,
        )?;
        Ok(Sources::new(triple).with_amateur(self.amateur.clone() as Arc<dyn LogitSource>))
    }
}

/// Means over the steps where a specialist contrast applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub cls_steps: usize,
    pub ide_steps: usize,
    pub mean_d_id: f64,
    pub mean_d_cl: f64,
    pub mean_head_nl: f64,
    pub mean_head_cl: f64,
    pub mean_head_id: f64,
    pub mean_head_inter: f64,
    pub fallback_rate: f64,
}

pub fn summarize_traces<'a>(traces: impl IntoIterator<Item = &'a AlcdStepTrace>) -> TraceSummary {
    let mut s = TraceSummary::default();
    let (mut d_id, mut d_cl) = (0.0, 0.0);
    let (mut nl, mut cl, mut id, mut inter, mut constrained, mut fallback) = (0, 0, 0, 0, 0, 0);
    for t in traces {
        s.steps += 1;
        match t.role {
            TokenRole::Cls => s.cls_steps += 1,
            TokenRole::Ide => s.ide_steps += 1,
            TokenRole::Other => continue,
        }
        d_id += t.d_id;
        d_cl += t.d_cl;
        if t.head_nl > 0 {
            constrained += 1;
            nl += t.head_nl;
            cl += t.head_cl;
            id += t.head_id;
            inter += t.head_inter;
            fallback += t.fallback as usize;
        }
    }
    let n = (s.cls_steps + s.ide_steps) as f64;
    if n > 0.0 {
        s.mean_d_id = d_id / n;
        s.mean_d_cl = d_cl / n;
    }
    if constrained > 0 {
        let c = constrained as f64;
        s.mean_head_nl = nl as f64 / c;
        s.mean_head_cl = cl as f64 / c;
        s.mean_head_id = id as f64 / c;
        s.mean_head_inter = inter as f64 / c;
        s.fallback_rate = fallback as f64 / c;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub split: Split,
    pub eval: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<TraceSummary>,
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub report: StrategyReport,
    pub outputs: Vec<String>,
    pub traces: Vec<Vec<AlcdStepTrace>>,
}

impl StrategyRun {
    pub fn outputs_jsonl(&self, corpus: &Corpus) -> String {
        let mut s = String::new();
        for (r, out) in corpus.records.iter().zip(&self.outputs) {
            let line = serde_json::json!({ "id": r.id, "output": out });
            s.push_str(&line.to_string());
            s.push('\n');
        }
        s
    }

    pub fn traces_jsonl(&self, corpus: &Corpus) -> String {
        let mut s = String::new();
        for (r, steps) in corpus.records.iter().zip(&self.traces) {
            for (t, step) in steps.iter().enumerate() {
                let line = serde_json::json!({ "id": r.id, "t": t, "trace": step });
                s.push_str(&line.to_string());
                s.push('\n');
            }
        }
        s
    }
}

fn record_context(r: &MieRecord, vocab: &Vocab) -> Result<DecodeContext> {
    Ok(DecodeContext::new(vocab.encode(&r.instruction)?, vocab.encode(&r.input)?, Vec::new()))
}

fn ablated_context(r: &MieRecord, vocab: &Vocab, labels: &[String]) -> Result<DecodeContext> {
    Ok(DecodeContext::new(
        vocab.encode(&strip_labels(&r.instruction, labels))?,
        vocab.encode(&strip_labels(&r.input, labels))?,
        Vec::new(),
    ))
}

/// Sampling seed for one record, independent of evaluation order.
fn record_seed(decode_seed: u64, index: usize) -> u64 {
    decode_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Decodes every record of `corpus` and scores the outputs.
pub fn run_strategy(
    sources: &Sources,
    data: &Data,
    corpus: &Corpus,
    strategy: Strategy,
    max_length: usize,
    decode_seed: u64,
) -> Result<StrategyRun> {
    let vocab = &data.vocab;
    let eos = vocab.eos_id();
    let decoded: Vec<(String, Vec<AlcdStepTrace>)> = corpus
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let ctx = record_context(r, vocab)?;
            let ablated = ablated_context(r, vocab, &data.task.labels)?;
            let cfg = DecodeConfig {
                strategy,
                max_length,
                seed: record_seed(decode_seed, i),
            };
            let out = decode_with(sources, &ctx, Some(&ablated), &cfg)?;
            Ok((vocab.decode_text(out.body(eos)), out.traces))
        })
        .collect::<Result<_>>()?;
    let (outputs, traces): (Vec<String>, Vec<Vec<AlcdStepTrace>>) = decoded.into_iter().unzip();
    let preds: Vec<_> = outputs.iter().map(|o| parse_output(o)).collect();
    let golds: Vec<Vec<Pair>> = corpus.records.iter().map(|r| r.pairs.clone()).collect();
    let inputs: Vec<&str> = corpus.records.iter().map(|r| r.input.as_str()).collect();
    let eval = evaluate(&preds, &golds, &inputs)?;
    let traces_summary = strategy.alcd().map(|_| summarize_traces(traces.iter().flatten()));
    Ok(StrategyRun {
        report: StrategyReport {
            strategy,
            split: corpus.split,
            eval,
            traces: traces_summary,
        },
        outputs,
        traces,
    })
}

fn alcd_params(strategy: &Strategy) -> Option<AlcdParams> {
    strategy.alcd().map(|(_, p)| p)
}

/// Replaces α and β of an ALCD-family strategy.
pub fn with_alpha_beta(strategy: Strategy, alpha: f64, beta: f64) -> Strategy {
    let set = |p: AlcdParams| AlcdParams { alpha, beta, ..p };
    match strategy {
        Strategy::Alcd(p) => Strategy::Alcd(set(p)),
        Strategy::NoConstraint(p) => Strategy::NoConstraint(set(p)),
        Strategy::AlternateSum(p) => Strategy::AlternateSum(set(p)),
        Strategy::WeightedSum(p) => Strategy::WeightedSum(set(p)),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub f1: f64,
}

/// Best point by F1; ties go to the smaller α, then the smaller β.
pub fn select_best(points: &[GridPoint]) -> Option<GridPoint> {
    let mut best: Option<GridPoint> = None;
    for p in points {
        let better = match best {
            None => true,
            Some(b) => {
                p.f1 > b.f1 || (p.f1 == b.f1 && (p.alpha < b.alpha || (p.alpha == b.alpha && p.beta < b.beta)))
            }
        };
        if better {
            best = Some(*p);
        }
    }
    best
}

/// Per-value maximum over the other axis, in grid order.
pub fn marginal(points: &[GridPoint], by_alpha: bool) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in points {
        let key = if by_alpha { p.alpha } else { p.beta };
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = slot.1.max(p.f1),
            None => out.push((key, p.f1)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
    pub test: StrategyReport,
}

/// Validation grid over α × β, then one test run at the best point.
pub fn grid_search(cfg: &ExperimentConfig, data: &Data, ck: &Checkpoints) -> Result<GridResult> {
    let sources = ck.sources(data.vocab.clone())?;
    let base = Strategy::from_id("alcd", &cfg.decode.params)?;
    let pairs: Vec<(f64, f64)> = cfg
        .alpha_grid
        .iter()
        .flat_map(|&a| cfg.beta_grid.iter().map(move |&b| (a, b)))
        .collect();
    let seed = cfg.seeds().decode;
    let points: Vec<GridPoint> = pairs
        .par_iter()
        .map(|&(alpha, beta)| {
            let s = with_alpha_beta(base, alpha, beta);
            s.validate()?;
            let run = run_strategy(&sources, data, &data.valid, s, cfg.decode.max_length, seed)?;
            Ok(GridPoint {
                alpha,
                beta,
                f1: run.report.eval.f1,
            })
        })
        .collect::<Result<_>>()?;
    let best = select_best(&points).expect("grid is nonempty");
    let test = run_strategy(
        &sources,
        data,
        &data.test,
        with_alpha_beta(base, best.alpha, best.beta),
        cfg.decode.max_length,
        seed,
    )?
    .report;
    Ok(GridResult { points, best, test })
}

/// The four ALCD variants on the test split at (α, β).
pub fn ablation(cfg: &ExperimentConfig, data: &Data, ck: &Checkpoints, alpha: f64, beta: f64) -> Result<Vec<StrategyReport>> {
    let sources = ck.sources(data.vocab.clone())?;
    ABLATION
        .par_iter()
        .map(|id| {
            let s = with_alpha_beta(Strategy::from_id(id, &cfg.decode.params)?, alpha, beta);
            Ok(run_strategy(&sources, data, &data.test, s, cfg.decode.max_length, cfg.seeds().decode)?.report)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub step: u64,
    pub f1: f64,
}

fn tag(strategy: &Strategy, split: Split) -> String {
    format!("{}-{}", strategy.id(), split.name())
}

fn csv_table(rows: &[StrategyReport]) -> String {
    let mut s = format!("strategy,split,{}\n", EvalReport::CSV_HEADER);
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.strategy.id(), r.split.name(), r.eval.csv_row()));
    }
    s
}

fn configure_threads(cfg: &ExperimentConfig) {
    if let Some(n) = cfg.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub const MODELS: [&str; 3] = ["normal", "classification", "identification"];

/// Loads corpora and vocabulary written by [`cmd_gen`].
pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let layout = cfg.layout();
    let vocab_path = layout.vocab();
    if !vocab_path.exists() {
        return Err(Error::MissingArtifact(vocab_path));
    }
    let text = std::fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let vocab = Vocab::from_json(&text)?;
    let mut task = TaskSpec::from_file(&cfg.task)?;
    task.seed ^= cfg.seeds().corpus;
    Ok(Data {
        task,
        vocab: Arc::new(vocab),
        train: Corpus::read(&layout.split(Split::Train), Split::Train)?,
        valid: Corpus::read(&layout.split(Split::Valid), Split::Valid)?,
        test: Corpus::read(&layout.split(Split::Test), Split::Test)?,
    })
}

fn load_model(cfg: &ExperimentConfig, vocab: &Vocab, name: &str, step: u64) -> Result<TinyLm> {
    TinyLm::load(&cfg.layout().checkpoint(name, step), vocab)
}

/// Loads final specialists, the final normal model and its half-step amateur.
pub fn load_checkpoints(cfg: &ExperimentConfig, vocab: &Vocab) -> Result<Checkpoints> {
    let t = &cfg.train;
    Ok(Checkpoints {
        normal: Arc::new(load_model(cfg, vocab, "normal", t.normal.steps)?),
        classification: Arc::new(load_model(cfg, vocab, "classification", t.classification.steps)?),
        identification: Arc::new(load_model(cfg, vocab, "identification", t.identification.steps)?),
        amateur: Arc::new(load_model(cfg, vocab, "normal", t.normal.steps / 2)?),
    })
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    configure_threads(cfg);
    let mut m = RunManifest::new("gen", cfg);
    let data = m.time("generate", || generate(cfg))?;
    let layout = cfg.layout();
    for s in [Split::Train, Split::Valid, Split::Test] {
        let path = layout.split(s);
        write_file(&path, data.split(s).to_jsonl().as_bytes())?;
        m.add(path)?;
    }
    write_file(&layout.vocab(), data.vocab.to_json().as_bytes())?;
    m.add(layout.vocab())?;
    m.finish(cfg)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    configure_threads(cfg);
    let data = load_data(cfg)?;
    let mut m = RunManifest::new("train", cfg);
    let run = m.time("train", || train_models(cfg, &data))?;
    let layout = cfg.layout();
    for (name, r) in MODELS.iter().zip([&run.normal, &run.classification, &run.identification]) {
        for ck in &r.checkpoints {
            let path = layout.checkpoint(name, ck.steps());
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            ck.save(&path)?;
            m.add(path)?;
        }
        let loss = layout.losses(name);
        write_file(&loss, r.loss_csv().as_bytes())?;
        m.add(loss)?;
    }
    m.finish(cfg)
}

fn strategy_for(cfg: &ExperimentConfig, id: &str) -> Result<Strategy> {
    Strategy::from_id(id, &cfg.decode.params)
}

/// Decodes one split and writes outputs (plus traces for the ALCD family).
pub fn cmd_decode(cfg: &ExperimentConfig, strategy_id: &str, split: Split) -> Result<RunManifest> {
    cfg.validate()?;
    configure_threads(cfg);
    let strategy = strategy_for(cfg, strategy_id)?;
    let data = load_data(cfg)?;
    let ck = load_checkpoints(cfg, &data.vocab)?;
    let sources = ck.sources(data.vocab.clone())?;
    let mut m = RunManifest::new("decode", cfg);
    let corpus = data.split(split);
    let seed = cfg.seeds().decode;
    let run = m.time("decode", || run_strategy(&sources, &data, corpus, strategy, cfg.decode.max_length, seed))?;
    write_run(cfg, &mut m, &run, corpus, false)?;
    m.finish(cfg)
}

fn write_run(cfg: &ExperimentConfig, m: &mut RunManifest, run: &StrategyRun, corpus: &Corpus, report: bool) -> Result<()> {
    let layout = cfg.layout();
    let t = tag(&run.report.strategy, run.report.split);
    let out = layout.outputs(&t);
    write_file(&out, run.outputs_jsonl(corpus).as_bytes())?;
    m.add(out)?;
    if alcd_params(&run.report.strategy).is_some() {
        let tr = layout.traces(&t);
        write_file(&tr, run.traces_jsonl(corpus).as_bytes())?;
        m.add(tr)?;
    }
    if report {
        let rp = layout.report(&t);
        write_json(&rp, &run.report)?;
        m.add(rp)?;
    }
    Ok(())
}

/// Decodes and scores each strategy; writes per-strategy JSON and `eval.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, strategy_ids: &[String], split: Split) -> Result<(RunManifest, Vec<StrategyReport>)> {
    cfg.validate()?;
    configure_threads(cfg);
    let ids: Vec<String> = if strategy_ids.is_empty() {
        cfg.decode.strategies.clone()
    } else {
        strategy_ids.to_vec()
    };
    let strategies: Vec<Strategy> = ids.iter().map(|id| strategy_for(cfg, id)).collect::<Result<_>>()?;
    let data = load_data(cfg)?;
    let ck = load_checkpoints(cfg, &data.vocab)?;
    let sources = ck.sources(data.vocab.clone())?;
    let mut m = RunManifest::new("eval", cfg);
    let corpus = data.split(split);
    let seed = cfg.seeds().decode;
    let runs: Vec<StrategyRun> = m.time("decode", || {
        strategies
            .par_iter()
            .map(|&s| run_strategy(&sources, &data, corpus, s, cfg.decode.max_length, seed))
            .collect()
    })?;
    for run in &runs {
        write_run(cfg, &mut m, run, corpus, true)?;
    }
    let reports: Vec<StrategyReport> = runs.into_iter().map(|r| r.report).collect();
    let csv = cfg.layout().reports_dir().join("eval.csv");
    write_file(&csv, csv_table(&reports).as_bytes())?;
    m.add(csv)?;
    Ok((m.finish(cfg)?, reports))
}

fn write_plot(path: &Path, header: &str, rows: impl IntoIterator<Item = (String, f64)>) -> Result<()> {
    let mut s = format!("{header}\tf1\n");
    for (k, v) in rows {
        s.push_str(&format!("{k}\t{v}\n"));
    }
    write_file(path, s.as_bytes())
}

pub fn cmd_grid(cfg: &ExperimentConfig, plot: bool) -> Result<(RunManifest, GridResult)> {
    cfg.validate()?;
    configure_threads(cfg);
    let data = load_data(cfg)?;
    let ck = load_checkpoints(cfg, &data.vocab)?;
    let mut m = RunManifest::new("grid", cfg);
    let result = m.time("grid", || grid_search(cfg, &data, &ck))?;
    let layout = cfg.layout();
    let json = layout.reports_dir().join("grid.json");
    write_json(&json, &result)?;
    m.add(json)?;
    let mut csv = String::from("alpha,beta,f1\n");
    for p in &result.points {
        csv.push_str(&format!("{},{},{}\n", p.alpha, p.beta, p.f1));
    }
    let csv_path = layout.reports_dir().join("grid.csv");
    write_file(&csv_path, csv.as_bytes())?;
    m.add(csv_path)?;
    if plot {
        for (by_alpha, name) in [(true, "alpha"), (false, "beta")] {
            let path = layout.plots_dir().join(format!("grid-{name}.tsv"));
            write_plot(&path, name, marginal(&result.points, by_alpha).into_iter().map(|(k, v)| (k.to_string(), v)))?;
            m.add(path)?;
        }
    }
    Ok((m.finish(cfg)?, result))
}

/// α and β from a finished grid search, else the configured ones.
pub fn chosen_alpha_beta(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let path = cfg.layout().reports_dir().join("grid.json");
    if path.exists() {
        let g: GridResult = read_json(&path)?;
        Ok((g.best.alpha, g.best.beta))
    } else {
        Ok((cfg.decode.params.alpha, cfg.decode.params.beta))
    }
}

pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<(RunManifest, Vec<StrategyReport>)> {
    cfg.validate()?;
    configure_threads(cfg);
    let data = load_data(cfg)?;
    let ck = load_checkpoints(cfg, &data.vocab)?;
    let (alpha, beta) = chosen_alpha_beta(cfg)?;
    let mut m = RunManifest::new("ablate", cfg);
    let rows = m.time("ablate", || ablation(cfg, &data, &ck, alpha, beta))?;
    let layout = cfg.layout();
    let json = layout.reports_dir().join("ablate.json");
    write_json(&json, &rows)?;
    m.add(json)?;
    let csv = layout.reports_dir().join("ablate.csv");
    write_file(&csv, csv_table(&rows).as_bytes())?;
    m.add(csv)?;
    Ok((m.finish(cfg)?, rows))
}

fn sweep_steps(cfg: &ExperimentConfig) -> Vec<u64> {
    if !cfg.sweep_steps.is_empty() {
        return cfg.sweep_steps.clone();
    }
    let max = cfg.train.classification.steps.min(cfg.train.identification.steps);
    let mut steps: Vec<u64> = (0..=max).step_by(cfg.checkpoint_every as usize).collect();
    if steps.last() != Some(&max) {
        steps.push(max);
    }
    steps
}

/// ALCD on the test split with specialists taken from each sweep step; the
/// normal model stays at its final checkpoint.
pub fn cmd_sweep_steps(cfg: &ExperimentConfig, plot: bool) -> Result<(RunManifest, Vec<SweepPoint>)> {
    cfg.validate()?;
    configure_threads(cfg);
    let data = load_data(cfg)?;
    let ck = load_checkpoints(cfg, &data.vocab)?;
    let (alpha, beta) = chosen_alpha_beta(cfg)?;
    let strategy = with_alpha_beta(strategy_for(cfg, "alcd")?, alpha, beta);
    let mut m = RunManifest::new("sweep-steps", cfg);
    let steps = sweep_steps(cfg);
    let points: Vec<SweepPoint> = m.time("sweep", || {
        steps
            .par_iter()
            .map(|&step| {
                let cl = load_model(cfg, &data.vocab, "classification", step)?;
                let id = load_model(cfg, &data.vocab, "identification", step)?;
                let sources = ck.with_specialists(cl, id).sources(data.vocab.clone())?;
                let run = run_strategy(&sources, &data, &data.test, strategy, cfg.decode.max_length, cfg.seeds().decode)?;
                Ok(SweepPoint {
                    step,
                    f1: run.report.eval.f1,
                })
            })
            .collect()
    })?;
    let layout = cfg.layout();
    let json = layout.reports_dir().join("sweep-steps.json");
    write_json(&json, &points)?;
    m.add(json)?;
    let mut csv = String::from("step,f1\n");
    for p in &points {
        csv.push_str(&format!("{},{}\n", p.step, p.f1));
    }
    let csv_path = layout.reports_dir().join("sweep-steps.csv");
    write_file(&csv_path, csv.as_bytes())?;
    m.add(csv_path)?;
    if plot {
        let path = layout.plots_dir().join("sweep-steps.tsv");
        write_plot(&path, "step", points.iter().map(|p| (p.step.to_string(), p.f1)))?;
        m.add(path)?;
    }
    Ok((m.finish(cfg)?, points))
}
