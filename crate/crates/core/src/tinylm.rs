//! A tiny fixed-window neural language model.
//!
//! The last `k` tokens of `instruction ++ input ++ [sep] ++ prefix` are
//! embedded, concatenated, passed through one `tanh` hidden layer and then a
//! linear layer over the vocabulary. The separator is the end-of-sequence
//! sentinel, which also left-pads short contexts, so the model can tell where
//! the answer region starts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::logits::{DecodeContext, LogitSource, LogitVector};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyLmDims {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl TinyLmDims {
    pub fn with_vocab(vocab_size: usize) -> Self {
        TinyLmDims {
            vocab_size,
            context_window: 8,
            embedding_dim: 16,
            hidden_dim: 64,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.context_window * self.embedding_dim
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.context_window == 0
            || self.embedding_dim == 0
            || self.hidden_dim == 0
        {
            return Err(Error::config(format!("every TinyLM dimension must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Parameter tensors, row-major. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `vocab_size x embedding_dim`
    pub embedding: Vec<f64>,
    /// `hidden_dim x (context_window * embedding_dim)`
    pub hidden_weight: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// `vocab_size x hidden_dim`
    pub output_weight: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl Params {
    pub fn zeros(d: &TinyLmDims) -> Self {
        Params {
            embedding: vec![0.0; d.vocab_size * d.embedding_dim],
            hidden_weight: vec![0.0; d.hidden_dim * d.input_dim()],
            hidden_bias: vec![0.0; d.hidden_dim],
            output_weight: vec![0.0; d.vocab_size * d.hidden_dim],
            output_bias: vec![0.0; d.vocab_size],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 5] {
        [
            &self.embedding,
            &self.hidden_weight,
            &self.hidden_bias,
            &self.output_weight,
            &self.output_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embedding,
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view over every parameter, in tensor order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors().into_iter().flat_map(|t| t.iter())
    }

    pub fn get(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, value: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm {
    dims: TinyLmDims,
    params: Params,
    eos_id: usize,
    vocab_hash: String,
    steps: u64,
}

/// Activations of one forward pass, kept for backpropagation.
pub(crate) struct Forward {
    pub window: Vec<usize>,
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl TinyLm {
    /// Random initialization: uniform weights scaled by fan-in, zero biases.
    pub fn init(vocab: &Vocab, dims: TinyLmDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        if dims.vocab_size != vocab.len() {
            return Err(Error::Shape {
                expected: vocab.len(),
                got: dims.vocab_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&dims);
        let mut fill = |t: &mut Vec<f64>, bound: f64| {
            for x in t.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        };
        fill(&mut params.embedding, 1.0);
        fill(&mut params.hidden_weight, 1.0 / (dims.input_dim() as f64).sqrt());
        fill(&mut params.output_weight, 1.0 / (dims.hidden_dim as f64).sqrt());
        Ok(TinyLm {
            dims,
            params,
            eos_id: vocab.eos_id(),
            vocab_hash: vocab.hash(),
            steps: 0,
        })
    }

    /// Builds a model from explicit parameters.
    pub fn from_params(vocab: &Vocab, dims: TinyLmDims, params: Params) -> Result<Self> {
        dims.validate()?;
        let expected = Params::zeros(&dims);
        for (want, got) in expected.tensors().iter().zip(params.tensors()) {
            if want.len() != got.len() {
                return Err(Error::Shape {
                    expected: want.len(),
                    got: got.len(),
                });
            }
        }
        if dims.vocab_size != vocab.len() {
            return Err(Error::Shape {
                expected: vocab.len(),
                got: dims.vocab_size,
            });
        }
        Ok(TinyLm {
            dims,
            params,
            eos_id: vocab.eos_id(),
            vocab_hash: vocab.hash(),
            steps: 0,
        })
    }

    pub fn dims(&self) -> &TinyLmDims {
        &self.dims
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    /// Zeros the output layer so every context yields uniform probabilities.
    pub fn zero_output_layer(&mut self) {
        self.params.output_weight.iter_mut().for_each(|x| *x = 0.0);
        self.params.output_bias.iter_mut().for_each(|x| *x = 0.0);
    }

    /// The `k` token ids the model actually reads, oldest first.
    pub fn window(&self, ctx: &DecodeContext) -> Vec<usize> {
        let k = self.dims.context_window;
        let mut w = Vec::with_capacity(k);
        // walk backwards through prefix, separator, input, instruction
        let sep = [self.eos_id];
        let parts: [&[usize]; 4] = [&ctx.prefix, &sep, &ctx.input, &ctx.instruction];
        'outer: for part in parts {
            for &t in part.iter().rev() {
                if w.len() == k {
                    break 'outer;
                }
                w.push(t);
            }
        }
        while w.len() < k {
            w.push(self.eos_id);
        }
        w.reverse();
        w
    }

    pub(crate) fn forward_window(&self, window: Vec<usize>) -> Forward {
        let d = &self.dims;
        let e = d.embedding_dim;
        let p = &self.params;
        let mut input = Vec::with_capacity(d.input_dim());
        for &t in &window {
            input.extend_from_slice(&p.embedding[t * e..(t + 1) * e]);
        }
        let n_in = d.input_dim();
        let hidden: Vec<f64> = (0..d.hidden_dim)
            .map(|j| {
                let row = &p.hidden_weight[j * n_in..(j + 1) * n_in];
                let z = p.hidden_bias[j] + dot(row, &input);
                z.tanh()
            })
            .collect();
        let h = d.hidden_dim;
        let logits: Vec<f64> = (0..d.vocab_size)
            .map(|v| p.output_bias[v] + dot(&p.output_weight[v * h..(v + 1) * h], &hidden))
            .collect();
        Forward {
            window,
            input,
            hidden,
            logits,
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logits`.
    pub(crate) fn backward(&self, fwd: &Forward, dlogits: &[f64], grad: &mut Params) {
        let d = &self.dims;
        let (e, h, n_in) = (d.embedding_dim, d.hidden_dim, d.input_dim());
        let p = &self.params;
        let mut dh = vec![0.0; h];
        for (v, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.output_bias[v] += g;
            let row = v * h;
            for j in 0..h {
                grad.output_weight[row + j] += g * fwd.hidden[j];
                dh[j] += g * p.output_weight[row + j];
            }
        }
        let mut dx = vec![0.0; n_in];
        for j in 0..h {
            let dz = dh[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
            if dz == 0.0 {
                continue;
            }
            grad.hidden_bias[j] += dz;
            let row = j * n_in;
            for i in 0..n_in {
                grad.hidden_weight[row + i] += dz * fwd.input[i];
                dx[i] += dz * p.hidden_weight[row + i];
            }
        }
        for (slot, &t) in fwd.window.iter().enumerate() {
            let dst = &mut grad.embedding[t * e..(t + 1) * e];
            for (a, b) in dst.iter_mut().zip(&dx[slot * e..(slot + 1) * e]) {
                *a += b;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.dims,
            vocab_hash: self.vocab_hash.clone(),
            steps: self.steps,
            eos_id: self.eos_id,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, vocab: &Vocab) -> Result<Self> {
        if ck.vocab_hash != vocab.hash() {
            return Err(Error::config("checkpoint was trained on a different vocabulary"));
        }
        let mut m = TinyLm::from_params(vocab, ck.dims, ck.params)?;
        m.steps = ck.steps;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_checkpoint()).expect("checkpoint serializes");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        TinyLm::from_checkpoint(ck, vocab)
    }
}

impl LogitSource for TinyLm {
    fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    fn next_logits(&self, ctx: &DecodeContext) -> LogitVector {
        LogitVector(self.forward_window(self.window(ctx)).logits)
    }
}

/// Serialized form: dimensions first, then row-major weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: TinyLmDims,
    pub vocab_hash: String,
    pub steps: u64,
    pub eos_id: usize,
    pub params: Params,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
