//! Compact pre-norm encoder-decoder transformer with an encoder-side
//! masked-LM output layer.
//!
//! The embedding table is shared by the encoder input, the decoder input and
//! the decoder output projection. The masked-LM head is a separate linear
//! layer on top of the final encoder states and is never touched by the
//! translation path.

mod float;
mod ops;
mod params;

use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use float::{matmul, Scalar};
pub use ops::positional_encoding;
pub use params::{Layout, ModelConfig, ModelParams, Tensor};

use crate::noising::{NoisedExample, Task};
use crate::scheduling::TaskBatch;
use crate::tokenizer::{TokenId, BOS, EOS};
use ops::*;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} in {task:?} pass")]
    NonFinite { task: Task, what: &'static str },
}

/// Per-task mean losses (nats per token) and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskLosses {
    pub mt: f64,
    pub mlm: f64,
    pub dae: f64,
    pub total: f64,
}

impl TaskLosses {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Mt => self.mt,
            Task::Mlm => self.mlm,
            Task::Dae => self.dae,
        }
    }

    fn set(&mut self, task: Task, v: f64) {
        match task {
            Task::Mt => self.mt = v,
            Task::Mlm => self.mlm = v,
            Task::Dae => self.dae = v,
        }
    }

    fn finish(mut self) -> Self {
        self.total = self.mt + self.mlm + self.dae;
        self
    }
}

/// Summed loss and the number of predicted tokens behind it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskStats {
    pub sum: f64,
    pub count: usize,
}

impl TaskStats {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Sequences packed back to back.
#[derive(Debug, Clone, PartialEq)]
struct Packed {
    ids: Vec<u32>,
    ranges: Vec<(usize, usize)>,
}

impl Packed {
    fn new<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut ids = Vec::new();
        let mut ranges = Vec::new();
        for s in seqs {
            ranges.push((ids.len(), s.len()));
            ids.extend_from_slice(s);
        }
        Packed { ids, ranges }
    }
}

struct EncLayerCache<T> {
    norm_attn: NormCache<T>,
    attn: AttnCache<T>,
    drop_attn: Option<Vec<T>>,
    norm_ffn: NormCache<T>,
    ffn: FfnCache<T>,
    drop_ffn: Option<Vec<T>>,
}

struct EncCache<T> {
    ids: Vec<u32>,
    drop_embed: Option<Vec<T>>,
    layers: Vec<EncLayerCache<T>>,
    norm: NormCache<T>,
}

struct DecLayerCache<T> {
    norm_self: NormCache<T>,
    self_attn: AttnCache<T>,
    drop_self: Option<Vec<T>>,
    norm_cross: NormCache<T>,
    cross_attn: AttnCache<T>,
    drop_cross: Option<Vec<T>>,
    norm_ffn: NormCache<T>,
    ffn: FfnCache<T>,
    drop_ffn: Option<Vec<T>>,
}

struct DecCache<T> {
    ids: Vec<u32>,
    drop_embed: Option<Vec<T>>,
    layers: Vec<DecLayerCache<T>>,
    norm: NormCache<T>,
    enc_len: usize,
}

/// Encoder states of one source sentence, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedSource<T> {
    states: Vec<T>,
    len: usize,
}

impl<T> EncodedSource<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[derive(Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ModelParams<T>,
    empty_mlm_batches: AtomicU64,
}

impl<T: Clone> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            empty_mlm_batches: AtomicU64::new(self.empty_mlm_batches.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        let params = ModelParams::init(&cfg, seed);
        Ok(Model { cfg, params, empty_mlm_batches: AtomicU64::new(0) })
    }

    pub fn from_params(cfg: ModelConfig, params: ModelParams<T>) -> Result<Self, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        if params.layout != Layout::new(&cfg) {
            return Err(ModelError::Shape("parameter layout does not match configuration".into()));
        }
        Ok(Model { cfg, params, empty_mlm_batches: AtomicU64::new(0) })
    }

    /// MLM batches seen with no masked position (they contribute zero loss).
    pub fn empty_mlm_batches(&self) -> u64 {
        self.empty_mlm_batches.load(Ordering::Relaxed)
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        match ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            Some(bad) => Err(ModelError::Shape(format!(
                "token id {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn encode(&self, src: &Packed, rng: &mut Option<ChaCha8Rng>) -> (Vec<T>, EncCache<T>) {
        let p = &self.params.data;
        let lay = &self.params.layout;
        let d = self.cfg.d_model;
        let rate = self.cfg.dropout;
        let mut x = embed_forward(&src.ids, &src.ranges, d, lay.embed.of(p));
        let drop_embed = dropout_forward(&mut x, rate, rng.as_mut());
        let pairs = self_pairs(&src.ranges);
        let mut layers = Vec::with_capacity(lay.enc.len());
        for l in &lay.enc {
            let (a, norm_attn) = norm_forward(&x, d, &l.norm_attn, p);
            let (mut y, attn) = attention_forward(&a, &a, &pairs, false, self.cfg.heads, &l.attn, p);
            let drop_attn = dropout_forward(&mut y, rate, rng.as_mut());
            add_into(&mut x, &y);
            let (b, norm_ffn) = norm_forward(&x, d, &l.norm_ffn, p);
            let (mut f, ffn) = ffn_forward(&b, &l.ffn, p);
            let drop_ffn = dropout_forward(&mut f, rate, rng.as_mut());
            add_into(&mut x, &f);
            layers.push(EncLayerCache { norm_attn, attn, drop_attn, norm_ffn, ffn, drop_ffn });
        }
        let (out, norm) = norm_forward(&x, d, &lay.enc_norm, p);
        (out, EncCache { ids: src.ids.clone(), drop_embed, layers, norm })
    }

    fn encode_backward(&self, d_out: &[T], cache: &EncCache<T>, grads: &mut [T]) {
        let p = &self.params.data;
        let lay = &self.params.layout;
        let d = self.cfg.d_model;
        let mut dx = norm_backward(d_out, &cache.norm, d, &lay.enc_norm, p, grads);
        for (l, c) in lay.enc.iter().zip(&cache.layers).rev() {
            let mut df = dx.clone();
            dropout_backward(&mut df, &c.drop_ffn);
            let db = ffn_backward(&df, &c.ffn, &l.ffn, p, grads);
            add_into(&mut dx, &norm_backward(&db, &c.norm_ffn, d, &l.norm_ffn, p, grads));
            let mut dy = dx.clone();
            dropout_backward(&mut dy, &c.drop_attn);
            let (dq, dkv) = attention_backward(&dy, &c.attn, self.cfg.heads, &l.attn, p, grads);
            let mut da = dq;
            add_into(&mut da, &dkv);
            add_into(&mut dx, &norm_backward(&da, &c.norm_attn, d, &l.norm_attn, p, grads));
        }
        dropout_backward(&mut dx, &cache.drop_embed);
        embed_backward(&dx, &cache.ids, d, lay.embed.of_mut(grads));
    }

    /// Decoder over `tgt`; sequence `i` attends to encoder range `enc_ranges[i]`.
    fn decode(
        &self,
        tgt: &Packed,
        enc: &[T],
        enc_ranges: &[(usize, usize)],
        rng: &mut Option<ChaCha8Rng>,
    ) -> (Vec<T>, DecCache<T>) {
        let p = &self.params.data;
        let lay = &self.params.layout;
        let d = self.cfg.d_model;
        let rate = self.cfg.dropout;
        let mut x = embed_forward(&tgt.ids, &tgt.ranges, d, lay.embed.of(p));
        let drop_embed = dropout_forward(&mut x, rate, rng.as_mut());
        let self_p = self_pairs(&tgt.ranges);
        let cross_p: Vec<SeqPair> = tgt
            .ranges
            .iter()
            .zip(enc_ranges)
            .map(|(&q, &kv)| SeqPair { q, kv })
            .collect();
        let mut layers = Vec::with_capacity(lay.dec.len());
        for l in &lay.dec {
            let (a, norm_self) = norm_forward(&x, d, &l.norm_self, p);
            let (mut y, self_attn) = attention_forward(&a, &a, &self_p, true, self.cfg.heads, &l.self_attn, p);
            let drop_self = dropout_forward(&mut y, rate, rng.as_mut());
            add_into(&mut x, &y);
            let (b, norm_cross) = norm_forward(&x, d, &l.norm_cross, p);
            let (mut z, cross_attn) = attention_forward(&b, enc, &cross_p, false, self.cfg.heads, &l.cross_attn, p);
            let drop_cross = dropout_forward(&mut z, rate, rng.as_mut());
            add_into(&mut x, &z);
            let (c, norm_ffn) = norm_forward(&x, d, &l.norm_ffn, p);
            let (mut f, ffn) = ffn_forward(&c, &l.ffn, p);
            let drop_ffn = dropout_forward(&mut f, rate, rng.as_mut());
            add_into(&mut x, &f);
            layers.push(DecLayerCache {
                norm_self,
                self_attn,
                drop_self,
                norm_cross,
                cross_attn,
                drop_cross,
                norm_ffn,
                ffn,
                drop_ffn,
            });
        }
        let (out, norm) = norm_forward(&x, d, &lay.dec_norm, p);
        let cache = DecCache { ids: tgt.ids.clone(), drop_embed, layers, norm, enc_len: enc.len() };
        (out, cache)
    }

    /// Returns the gradient with respect to the encoder states.
    fn decode_backward(&self, d_out: &[T], cache: &DecCache<T>, grads: &mut [T]) -> Vec<T> {
        let p = &self.params.data;
        let lay = &self.params.layout;
        let d = self.cfg.d_model;
        let mut d_enc = vec![T::zero(); cache.enc_len];
        let mut dx = norm_backward(d_out, &cache.norm, d, &lay.dec_norm, p, grads);
        for (l, c) in lay.dec.iter().zip(&cache.layers).rev() {
            let mut df = dx.clone();
            dropout_backward(&mut df, &c.drop_ffn);
            let dc = ffn_backward(&df, &c.ffn, &l.ffn, p, grads);
            add_into(&mut dx, &norm_backward(&dc, &c.norm_ffn, d, &l.norm_ffn, p, grads));

            let mut dz = dx.clone();
            dropout_backward(&mut dz, &c.drop_cross);
            let (db, dkv) = attention_backward(&dz, &c.cross_attn, self.cfg.heads, &l.cross_attn, p, grads);
            add_into(&mut d_enc, &dkv);
            add_into(&mut dx, &norm_backward(&db, &c.norm_cross, d, &l.norm_cross, p, grads));

            let mut dy = dx.clone();
            dropout_backward(&mut dy, &c.drop_self);
            let (dq, dkv) = attention_backward(&dy, &c.self_attn, self.cfg.heads, &l.self_attn, p, grads);
            let mut da = dq;
            add_into(&mut da, &dkv);
            add_into(&mut dx, &norm_backward(&da, &c.norm_self, d, &l.norm_self, p, grads));
        }
        dropout_backward(&mut dx, &cache.drop_embed);
        embed_backward(&dx, &cache.ids, d, lay.embed.of_mut(grads));
        d_enc
    }

    /// Tied output projection: `logits = h @ E^T`.
    fn project(&self, h: &[T]) -> Vec<T> {
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        let n = h.len() / d;
        let mut logits = vec![T::zero(); n * v];
        matmul(&mut logits, h, self.params.layout.embed.of(&self.params.data), n, d, v, false, true, false);
        logits
    }

    fn seq2seq_inputs(&self, examples: &[NoisedExample]) -> Result<(Packed, Packed, Vec<u32>), ModelError> {
        let src = Packed::new(examples.iter().map(|e| e.input_ids.as_slice()));
        let tgt_in: Vec<Vec<u32>> = examples
            .iter()
            .map(|e| std::iter::once(BOS).chain(e.target_ids.iter().copied()).collect())
            .collect();
        let tgt = Packed::new(tgt_in.iter().map(|t| t.as_slice()));
        let labels: Vec<u32> = examples
            .iter()
            .flat_map(|e| e.target_ids.iter().copied().chain(std::iter::once(EOS)))
            .collect();
        if src.ranges.iter().any(|r| r.1 == 0) {
            return Err(ModelError::Shape("empty encoder input".into()));
        }
        self.check_ids(&src.ids)?;
        self.check_ids(&tgt.ids)?;
        Ok((src, tgt, labels))
    }

    /// Encoder-decoder pass (MT and DAE). With `grads`, backpropagates
    /// `scale * summed loss`.
    fn seq2seq_pass(
        &self,
        task: Task,
        examples: &[NoisedExample],
        scale: f64,
        grads: Option<&mut [T]>,
        rng: &mut Option<ChaCha8Rng>,
    ) -> Result<TaskStats, ModelError> {
        if examples.is_empty() {
            return Ok(TaskStats::default());
        }
        let (src, tgt, labels) = self.seq2seq_inputs(examples)?;
        let (enc, enc_cache) = self.encode(&src, rng);
        let (h, dec_cache) = self.decode(&tgt, &enc, &src.ranges, rng);
        let logits = self.project(&h);
        let v = self.cfg.vocab_size;
        let eps = self.cfg.label_smoothing;
        let Some(grads) = grads else {
            let sum = smoothed_xent(&logits, &labels, v, eps, scale, None);
            if !sum.is_finite() {
                return Err(ModelError::NonFinite { task, what: "loss" });
            }
            return Ok(TaskStats { sum, count: labels.len() });
        };
        let mut dlogits = vec![T::zero(); logits.len()];
        let sum = smoothed_xent(&logits, &labels, v, eps, scale, Some(&mut dlogits));
        if !sum.is_finite() {
            return Err(ModelError::NonFinite { task, what: "loss" });
        }
        let d = self.cfg.d_model;
        let n = labels.len();
        let lay = &self.params.layout;
        let mut dh = vec![T::zero(); n * d];
        matmul(&mut dh, &dlogits, lay.embed.of(&self.params.data), n, v, d, false, false, false);
        matmul(lay.embed.of_mut(grads), &dlogits, &h, v, n, d, true, false, true);
        let d_enc = self.decode_backward(&dh, &dec_cache, grads);
        self.encode_backward(&d_enc, &enc_cache, grads);
        Ok(TaskStats { sum, count: n })
    }

    fn mlm_pass(
        &self,
        examples: &[NoisedExample],
        scale: f64,
        grads: Option<&mut [T]>,
        rng: &mut Option<ChaCha8Rng>,
    ) -> Result<TaskStats, ModelError> {
        let rows: Vec<usize> = {
            let mut off = 0;
            let mut rows = Vec::new();
            for e in examples {
                if e.loss_mask.len() != e.input_ids.len() || e.target_ids.len() != e.input_ids.len() {
                    return Err(ModelError::Shape("MLM example lengths differ".into()));
                }
                rows.extend(e.loss_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| off + i));
                off += e.input_ids.len();
            }
            rows
        };
        if rows.is_empty() {
            self.empty_mlm_batches.fetch_add(1, Ordering::Relaxed);
            return Ok(TaskStats::default());
        }
        let labels: Vec<u32> = examples
            .iter()
            .flat_map(|e| e.target_ids.iter().zip(&e.loss_mask).filter(|(_, &m)| m).map(|(&t, _)| t))
            .collect();
        let src = Packed::new(examples.iter().map(|e| e.input_ids.as_slice()));
        self.check_ids(&src.ids)?;
        self.check_ids(&labels)?;
        let (enc, enc_cache) = self.encode(&src, rng);
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        let mut picked = vec![T::zero(); rows.len() * d];
        for (k, &r) in rows.iter().enumerate() {
            picked[k * d..(k + 1) * d].copy_from_slice(&enc[r * d..(r + 1) * d]);
        }
        let head = &self.params.layout.mlm_head;
        let logits = linear_forward(&picked, rows.len(), head, &self.params.data);
        let eps = self.cfg.label_smoothing;
        let Some(grads) = grads else {
            let sum = smoothed_xent(&logits, &labels, v, eps, scale, None);
            if !sum.is_finite() {
                return Err(ModelError::NonFinite { task: Task::Mlm, what: "loss" });
            }
            return Ok(TaskStats { sum, count: rows.len() });
        };
        let mut dlogits = vec![T::zero(); logits.len()];
        let sum = smoothed_xent(&logits, &labels, v, eps, scale, Some(&mut dlogits));
        if !sum.is_finite() {
            return Err(ModelError::NonFinite { task: Task::Mlm, what: "loss" });
        }
        let dpicked = linear_backward(&picked, &dlogits, rows.len(), head, &self.params.data, grads);
        let mut d_enc = vec![T::zero(); enc.len()];
        for (k, &r) in rows.iter().enumerate() {
            add_into(&mut d_enc[r * d..(r + 1) * d], &dpicked[k * d..(k + 1) * d]);
        }
        self.encode_backward(&d_enc, &enc_cache, grads);
        Ok(TaskStats { sum, count: rows.len() })
    }

    /// Number of predicted tokens a task batch contributes to its mean.
    pub fn loss_count(task: Task, examples: &[NoisedExample]) -> usize {
        match task {
            Task::Mt | Task::Dae => examples.iter().map(|e| e.target_ids.len() + 1).sum(),
            Task::Mlm => examples.iter().map(|e| e.masked_count()).sum(),
        }
    }

    /// Summed loss of one task batch, no dropout.
    pub fn task_stats(&self, task: Task, examples: &[NoisedExample]) -> Result<TaskStats, ModelError> {
        match task {
            Task::Mt | Task::Dae => self.seq2seq_pass(task, examples, 1.0, None, &mut None),
            Task::Mlm => self.mlm_pass(examples, 1.0, None, &mut None),
        }
    }

    /// Adds `scale * d(summed loss)/d(params)` into `grads`. Dropout is active
    /// when `dropout_rng` is given.
    pub fn accumulate_gradient(
        &self,
        task: Task,
        examples: &[NoisedExample],
        scale: f64,
        grads: &mut [T],
        dropout_rng: Option<ChaCha8Rng>,
    ) -> Result<TaskStats, ModelError> {
        if grads.len() != self.params.len() {
            return Err(ModelError::Shape("gradient buffer size".into()));
        }
        let mut rng = dropout_rng;
        let stats = match task {
            Task::Mt | Task::Dae => self.seq2seq_pass(task, examples, scale, Some(grads), &mut rng)?,
            Task::Mlm => self.mlm_pass(examples, scale, Some(grads), &mut rng)?,
        };
        Ok(stats)
    }

    /// Mean label-smoothed translation loss over non-padding target tokens.
    pub fn forward_mt(&self, examples: &[NoisedExample]) -> Result<f64, ModelError> {
        Ok(self.task_stats(Task::Mt, examples)?.mean())
    }

    /// Mean masked-LM loss over masked positions; 0 when none are masked.
    pub fn forward_mlm(&self, examples: &[NoisedExample]) -> Result<f64, ModelError> {
        Ok(self.task_stats(Task::Mlm, examples)?.mean())
    }

    /// Mean reconstruction loss of the original sentence given its noised form.
    pub fn forward_dae(&self, examples: &[NoisedExample]) -> Result<f64, ModelError> {
        Ok(self.task_stats(Task::Dae, examples)?.mean())
    }

    /// Per-task mean losses of one update's batches.
    pub fn losses(&self, batches: &[TaskBatch]) -> Result<TaskLosses, ModelError> {
        let mut out = TaskLosses::default();
        for b in batches {
            out.set(b.task, self.task_stats(b.task, &b.examples)?.mean());
        }
        Ok(out.finish())
    }

    /// Gradient of `Σ_task weight(task) * L_task` (per-task means) without
    /// dropout. Task gradients are accumulated into one buffer in batch order.
    pub fn loss_and_grad(
        &self,
        batches: &[TaskBatch],
        weight: impl Fn(Task) -> f64,
    ) -> Result<(TaskLosses, Vec<T>), ModelError> {
        let mut grads = self.zero_grads();
        let mut out = TaskLosses::default();
        for b in batches {
            let count = Self::loss_count(b.task, &b.examples);
            if count == 0 {
                if b.task == Task::Mlm {
                    self.empty_mlm_batches.fetch_add(1, Ordering::Relaxed);
                }
                continue;
            }
            let s = self.accumulate_gradient(b.task, &b.examples, weight(b.task) / count as f64, &mut grads, None)?;
            out.set(b.task, s.mean());
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFinite { task: batches.first().map(|b| b.task).unwrap_or(Task::Mt), what: "gradient" });
        }
        Ok((out.finish(), grads))
    }

    /// Runs the encoder over one source sentence (already carrying its LID).
    pub fn encode_source(&self, src: &[TokenId]) -> Result<EncodedSource<T>, ModelError> {
        if src.is_empty() {
            return Err(ModelError::Shape("empty encoder input".into()));
        }
        self.check_ids(src)?;
        let (states, _) = self.encode(&Packed::new([src]), &mut None);
        Ok(EncodedSource { states, len: src.len() })
    }

    /// Log-probabilities of the next token after each prefix (each starting
    /// with BOS), all conditioned on the same source.
    pub fn next_token_logprobs(&self, enc: &EncodedSource<T>, prefixes: &[Vec<TokenId>]) -> Vec<Vec<f64>> {
        if prefixes.is_empty() {
            return Vec::new();
        }
        let tgt = Packed::new(prefixes.iter().map(|p| p.as_slice()));
        let enc_ranges = vec![(0, enc.len); prefixes.len()];
        let (h, _) = self.decode(&tgt, &enc.states, &enc_ranges, &mut None);
        let d = self.cfg.d_model;
        let last: Vec<T> = tgt
            .ranges
            .iter()
            .flat_map(|&(s, l)| h[(s + l - 1) * d..(s + l) * d].iter().copied())
            .collect();
        let logits = self.project(&last);
        logits
            .chunks_exact(self.cfg.vocab_size)
            .map(|row| {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
                let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
                row.iter().map(|v| v.f64() - lse).collect()
            })
            .collect()
    }

    /// Decoder logits at every position of `tgt_in` for one source.
    pub fn translation_logits(&self, src: &[TokenId], tgt_in: &[TokenId]) -> Result<Vec<T>, ModelError> {
        let enc = self.encode_source(src)?;
        self.check_ids(tgt_in)?;
        let tgt = Packed::new([tgt_in]);
        let (h, _) = self.decode(&tgt, &enc.states, &[(0, enc.len)], &mut None);
        Ok(self.project(&h))
    }

    /// Masked-LM head logits at every encoder position.
    pub fn mlm_logits(&self, input: &[TokenId]) -> Result<Vec<T>, ModelError> {
        let enc = self.encode_source(input)?;
        Ok(linear_forward(&enc.states, enc.len, &self.params.layout.mlm_head, &self.params.data))
    }

    /// Teacher-forced argmax accuracy over target tokens plus EOS:
    /// `(correct, total)`.
    pub fn teacher_forced_accuracy(&self, examples: &[NoisedExample]) -> Result<(usize, usize), ModelError> {
        if examples.is_empty() {
            return Ok((0, 0));
        }
        let (src, tgt, labels) = self.seq2seq_inputs(examples)?;
        let (enc, _) = self.encode(&src, &mut None);
        let (h, _) = self.decode(&tgt, &enc, &src.ranges, &mut None);
        let logits = self.project(&h);
        let correct = logits
            .chunks_exact(self.cfg.vocab_size)
            .zip(&labels)
            .filter(|(row, &t)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                best == t as usize
            })
            .count();
        Ok((correct, labels.len()))
    }
}
