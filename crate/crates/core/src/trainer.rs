//! Adam with warmup, gradient accumulation, checkpoints and back-translation.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BitextCorpus, LangPair, LanguageId, MonoCorpus};
use crate::eval::{beam_decode, DecodeConfig, EvalError};
use crate::model::{Model, ModelConfig, ModelError, ModelParams, Scalar, TaskLosses};
use crate::noising::{make_mt_example, DaeConfig, MlmConfig, NoisedExample, Task, TargetLid};
use crate::scheduling::{
    BatchSampler, MixPlan, MtCorpus, SamplerState, ScheduleError, ScheduleValues, Schedules, TaskBatch, TaskData,
};
use crate::seeding::component_rng;
use crate::tokenizer::{SubwordVocab, VocabError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("learning-rate step must be >= 1, got {0}")]
    StepBelowOne(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("non-finite loss at step {step}: {losses:?}")]
    NonFinite { step: u64, losses: TaskLosses, batches: Vec<String> },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// Micro-batches drawn per update.
    pub accumulation: usize,
    pub max_steps: u64,
    /// Stop once the epoch counter passes this value.
    pub max_epochs: Option<u64>,
    pub seed: u64,
    /// Write `last.ckpt` every this many updates (0 = only at the end).
    pub checkpoint_every: u64,
    /// Validate every this many updates (0 = never).
    pub eval_every: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            peak_lr: 5e-4,
            warmup_steps: 400,
            accumulation: 4,
            max_steps: 2000,
            max_epochs: None,
            seed: 1,
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl OptimConfig {
    /// Large-scale preset: 16 accumulated batches, 4000 warmup steps.
    pub fn large() -> Self {
        OptimConfig { accumulation: 16, warmup_steps: 4000, max_steps: 300_000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.beta1) || !open(self.beta2) {
            return Err(TrainError::Config(format!("betas must be in (0,1): {}, {}", self.beta1, self.beta2)));
        }
        if !(self.peak_lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(TrainError::Config("peak_lr and adam_eps must be positive".into()));
        }
        if self.warmup_steps == 0 || self.accumulation == 0 {
            return Err(TrainError::Config("warmup_steps and accumulation must be positive".into()));
        }
        Ok(())
    }
}

/// `peak_lr * min(step / warmup, sqrt(warmup / step))`.
pub fn lr_at(step: u64, cfg: &OptimConfig) -> Result<f64, TrainError> {
    if step < 1 {
        return Err(TrainError::StepBelowOne(step));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.peak_lr * (s / w).min((w / s).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64, cfg: &OptimConfig) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::of(1.0 - cfg.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - cfg.beta2.powi(self.t as i32));
        let lr = T::of(lr);
        let eps = T::of(cfg.adam_eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub schedules: Schedules,
    pub plan: MixPlan,
    pub mlm: MlmConfig,
    pub dae: DaeConfig,
    /// Sentences are truncated to this many tokens.
    pub max_len: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate().map_err(TrainError::Config)?;
        self.optim.validate()?;
        self.schedules.validate()?;
        self.mlm.validate().map_err(TrainError::Config)?;
        self.dae.validate().map_err(TrainError::Config)?;
        if self.plan.tasks.is_empty() || self.plan.batch_tokens == 0 {
            return Err(TrainError::Config("mix plan needs tasks and a positive batch size".into()));
        }
        if self.max_len == 0 {
            return Err(TrainError::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Per-task loss over a set of micro-batches, normalized by the token count
/// of the whole set, with the gradient of the weighted sum of task means.
/// Dropout is seeded from `(seed, step)` when `dropout` is given.
pub fn accumulate_gradients<T: Scalar>(
    model: &Model<T>,
    micro: &[Vec<TaskBatch>],
    weight: impl Fn(Task) -> f64,
    dropout: Option<(u64, u64)>,
) -> Result<(TaskLosses, Vec<T>), ModelError> {
    let mut counts = [0usize; 3];
    for batches in micro {
        for b in batches {
            counts[task_index(b.task)] += Model::<T>::loss_count(b.task, &b.examples);
        }
    }
    let mut sums = [0.0; 3];
    let mut grads = model.zero_grads();
    for (mi, batches) in micro.iter().enumerate() {
        for (bi, b) in batches.iter().enumerate() {
            let ti = task_index(b.task);
            if counts[ti] == 0 {
                continue;
            }
            let rng = dropout.map(|(seed, step)| component_rng(seed, "dropout", step * 4096 + mi as u64 * 8 + bi as u64));
            let s = model.accumulate_gradient(b.task, &b.examples, weight(b.task) / counts[ti] as f64, &mut grads, rng)?;
            sums[ti] += s.sum;
        }
    }
    let mean = |i: usize| if counts[i] == 0 { 0.0 } else { sums[i] / counts[i] as f64 };
    let losses = TaskLosses { mt: mean(0), mlm: mean(1), dae: mean(2), total: mean(0) + mean(1) + mean(2) };
    if !losses.total.is_finite() {
        let task = Task::ALL.into_iter().find(|&t| !losses.get(t).is_finite()).unwrap_or(Task::Mt);
        return Err(ModelError::NonFinite { task, what: "loss" });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite { task: micro[0].first().map(|b| b.task).unwrap_or(Task::Mt), what: "gradient" });
    }
    Ok((losses, grads))
}

fn task_index(t: Task) -> usize {
    match t {
        Task::Mt => 0,
        Task::Mlm => 1,
        Task::Dae => 2,
    }
}

/// One metrics record per update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub k: u64,
    #[serde(rename = "T")]
    pub temperature: f64,
    #[serde(rename = "R_mlm")]
    pub mlm_ratio: f64,
    #[serde(rename = "R_dae")]
    pub dae_ratio: f64,
    #[serde(rename = "L_MT")]
    pub mt: f64,
    #[serde(rename = "L_MLM")]
    pub mlm: f64,
    #[serde(rename = "L_DAE")]
    pub dae: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_mt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_acc: Option<f64>,
}

impl StepRecord {
    pub fn losses(&self) -> TaskLosses {
        TaskLosses { mt: self.mt, mlm: self.mlm, dae: self.dae, total: self.total }
    }
}

/// Validation translation loss and teacher-forced token accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidStats {
    pub loss: f64,
    pub accuracy: f64,
    pub tokens: usize,
}

/// Teacher-forced MT loss and accuracy over tokenized bitext, in chunks.
pub fn evaluate_mt<T: Scalar>(model: &Model<T>, corpora: &[MtCorpus]) -> Result<ValidStats, ModelError> {
    let (mut sum, mut correct, mut total) = (0.0, 0usize, 0usize);
    for c in corpora {
        let examples: Vec<NoisedExample> = c
            .pairs
            .iter()
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, t)| make_mt_example(s, t, &c.lid))
            .collect();
        for chunk in examples.chunks(32) {
            sum += model.task_stats(Task::Mt, chunk)?.sum;
            let (ok, n) = model.teacher_forced_accuracy(chunk)?;
            correct += ok;
            total += n;
        }
    }
    let div = |a: f64| if total == 0 { 0.0 } else { a / total as f64 };
    Ok(ValidStats { loss: div(sum), accuracy: div(correct as f64), tokens: total })
}

pub struct Trainer<T: Scalar> {
    cfg: TrainConfig,
    vocab: SubwordVocab,
    model: Model<T>,
    adam: Adam<T>,
    sampler: BatchSampler,
    valid: Vec<MtCorpus>,
    step: u64,
    best_valid: Option<f64>,
    best_params: Option<Vec<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, vocab: SubwordVocab, data: TaskData, valid: Vec<MtCorpus>) -> Result<Self, TrainError> {
        cfg.validate()?;
        if cfg.model.vocab_size != vocab.len() {
            return Err(TrainError::Config(format!(
                "model vocab_size {} but vocabulary has {} entries",
                cfg.model.vocab_size,
                vocab.len()
            )));
        }
        let model = Model::new(cfg.model.clone(), cfg.optim.seed)?;
        let sampler = BatchSampler::new(
            data,
            cfg.plan.clone(),
            cfg.schedules.clone(),
            cfg.mlm,
            cfg.dae,
            cfg.optim.seed,
        )?;
        let adam = Adam::new(model.params.len());
        Ok(Trainer { cfg, vocab, model, adam, sampler, valid, step: 0, best_valid: None, best_params: None })
    }

    /// Rebuilds a trainer from a checkpoint; `data` must be the same
    /// tokenized data the run started with.
    pub fn resume(ckpt: Checkpoint, data: TaskData, valid: Vec<MtCorpus>) -> Result<Self, TrainError> {
        let vocab = SubwordVocab::from_text(&ckpt.header.vocab)?;
        let mut t = Trainer::new(ckpt.header.config.clone(), vocab, data, valid)?;
        t.model.params.data = ckpt.params.iter().map(|&x| T::of(x)).collect();
        t.adam = Adam {
            m: ckpt.adam_m.iter().map(|&x| T::of(x)).collect(),
            v: ckpt.adam_v.iter().map(|&x| T::of(x)).collect(),
            t: ckpt.header.adam_t,
        };
        t.sampler.restore(ckpt.header.sampler);
        t.step = ckpt.header.step;
        t.best_valid = ckpt.header.best_valid;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.sampler.epoch()
    }

    pub fn best_valid(&self) -> Option<f64> {
        self.best_valid
    }

    /// The parameters with the lowest validation loss seen by this trainer,
    /// or the current ones if validation never ran.
    pub fn best_model(&self) -> Model<T> {
        let mut m = self.model.clone();
        if let Some(p) = &self.best_params {
            m.params.data.clone_from(p);
        }
        m
    }

    pub fn sampler(&self) -> &BatchSampler {
        &self.sampler
    }

    /// Extends or shortens a resumed run.
    pub fn set_max_steps(&mut self, max_steps: u64) {
        self.cfg.optim.max_steps = max_steps;
    }

    /// True once `max_steps` or `max_epochs` is reached.
    pub fn finished(&self) -> bool {
        self.step >= self.cfg.optim.max_steps
            || self.cfg.optim.max_epochs.is_some_and(|m| self.sampler.epoch() > m)
    }

    /// Draws `accumulation` micro-batches, accumulates their gradients and
    /// applies one Adam update.
    pub fn train_step(&mut self) -> Result<StepRecord, TrainError> {
        let step = self.step + 1;
        let lr = lr_at(step, &self.cfg.optim)?;
        let mut micro = Vec::with_capacity(self.cfg.optim.accumulation);
        let mut values: Option<ScheduleValues> = None;
        for _ in 0..self.cfg.optim.accumulation {
            let (v, batches) = self.sampler.next_batches()?;
            values.get_or_insert(v);
            micro.push(batches);
        }
        let values = values.expect("accumulation >= 1");
        let plan = &self.cfg.plan;
        let dropout = (self.cfg.model.dropout > 0.0).then_some((self.cfg.optim.seed, step));
        let (losses, grads) = match accumulate_gradients(&self.model, &micro, |t| plan.weight(t), dropout) {
            Ok(r) => r,
            Err(ModelError::NonFinite { .. }) => {
                let batches = micro
                    .iter()
                    .flatten()
                    .flat_map(|b| b.examples.iter().map(|e| e.debug_record(&self.vocab)))
                    .collect();
                let losses = self.model.losses(&micro.concat()).unwrap_or(TaskLosses {
                    mt: f64::NAN,
                    mlm: f64::NAN,
                    dae: f64::NAN,
                    total: f64::NAN,
                });
                return Err(TrainError::NonFinite { step, losses, batches });
            }
            Err(e) => return Err(e.into()),
        };
        self.adam.step(&mut self.model.params.data, &grads, lr, &self.cfg.optim);
        if !self.model.params.all_finite() {
            return Err(TrainError::NonFinite { step, losses, batches: Vec::new() });
        }
        self.step = step;
        let mut rec = StepRecord {
            step,
            k: values.epoch,
            temperature: values.temperature,
            mlm_ratio: values.mlm_ratio,
            dae_ratio: values.dae_ratio,
            mt: losses.mt,
            mlm: losses.mlm,
            dae: losses.dae,
            total: losses.total,
            lr,
            valid_mt: None,
            valid_acc: None,
        };
        let every = self.cfg.optim.eval_every;
        if every > 0 && step % every == 0 && !self.valid.is_empty() {
            let v = self.validate()?;
            rec.valid_mt = Some(v.loss);
            rec.valid_acc = Some(v.accuracy);
        }
        Ok(rec)
    }

    /// Validation stats on the held-out bitext; updates the best loss.
    pub fn validate(&mut self) -> Result<ValidStats, TrainError> {
        let v = evaluate_mt(&self.model, &self.valid)?;
        if self.best_valid.map_or(true, |b| v.loss < b) {
            self.best_valid = Some(v.loss);
            self.best_params = Some(self.model.params.data.clone());
        }
        Ok(v)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                scalar: T::NAME.to_string(),
                config: self.cfg.clone(),
                vocab: self.vocab.to_text(),
                step: self.step,
                adam_t: self.adam.t,
                sampler: self.sampler.state().clone(),
                best_valid: self.best_valid,
            },
            params: self.model.params.data.iter().map(|x| x.f64()).collect(),
            adam_m: self.adam.m.iter().map(|x| x.f64()).collect(),
            adam_v: self.adam.v.iter().map(|x| x.f64()).collect(),
        }
    }

    /// Trains until finished, appending one JSON line per update to
    /// `metrics` and writing checkpoints under `out_dir`.
    pub fn run(&mut self, out_dir: Option<&Path>, metrics: &mut dyn Write) -> Result<Vec<StepRecord>, TrainError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io { path, source }
        };
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut records = Vec::new();
        while !self.finished() {
            let best_before = self.best_valid;
            let rec = match self.train_step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), TrainError::NonFinite { step, losses, batches }) = (out_dir, &e) {
                        let dump = serde_json::json!({ "step": step, "losses": losses, "batches": batches });
                        let path = dir.join("nonfinite_dump.json");
                        fs::write(&path, dump.to_string()).map_err(io_err(&path))?;
                    }
                    return Err(e);
                }
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(metrics, "{line}").map_err(io_err(Path::new("<metrics>")))?;
            if let Some(dir) = out_dir {
                if rec.valid_mt.is_some() && self.best_valid != best_before {
                    self.checkpoint().write(&dir.join("best.ckpt"))?;
                }
                let every = self.cfg.optim.checkpoint_every;
                if every > 0 && rec.step % every == 0 {
                    self.checkpoint().write(&dir.join("last.ckpt"))?;
                }
            }
            records.push(rec);
        }
        if let Some(dir) = out_dir {
            self.checkpoint().write(&dir.join("last.ckpt"))?;
        }
        Ok(records)
    }
}

const MAGIC: &[u8; 8] = b"MNMTCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub scalar: String,
    pub config: TrainConfig,
    pub vocab: String,
    pub step: u64,
    pub adam_t: u64,
    pub sampler: SamplerState,
    pub best_valid: Option<f64>,
}

/// Binary checkpoint: magic, version, JSON header, then parameters and both
/// Adam moments as little-endian f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let n = self.params.len();
        let mut out = Vec::with_capacity(32 + header.len() + 24 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for v in [&self.params, &self.adam_m, &self.adam_v] {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, TrainError> {
        let bad = |message: &str| TrainError::Checkpoint { path: path.to_path_buf(), message: message.into() };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| bad("truncated"))?;
        let version = u32::from_le_bytes(u32b);
        if version != CKPT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| bad("truncated"))?;
        let hlen = u64::from_le_bytes(u64b) as usize;
        if r.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&r[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
        r = &r[hlen..];
        r.read_exact(&mut u64b).map_err(|_| bad("truncated"))?;
        let n = u64::from_le_bytes(u64b) as usize;
        if r.len() != 24 * n {
            return Err(bad("parameter block size mismatch"));
        }
        let mut vecs = r.chunks_exact(8 * n.max(1)).map(|c| {
            c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect::<Vec<f64>>()
        });
        let (params, adam_m, adam_v) = if n == 0 {
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            (vecs.next().unwrap(), vecs.next().unwrap(), vecs.next().unwrap())
        };
        let expected = crate::model::Layout::new(&header.config.model).total;
        if params.len() != expected {
            return Err(bad(&format!("{} parameters, configuration needs {expected}", params.len())));
        }
        Ok(Checkpoint { header, params, adam_m, adam_v })
    }

    /// Atomic write: a temporary sibling file is renamed over `path`.
    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("ckpt.tmp");
        let io = |source| TrainError::Io { path: path.to_path_buf(), source };
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn vocab(&self) -> Result<SubwordVocab, TrainError> {
        Ok(SubwordVocab::from_text(&self.header.vocab)?)
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>, TrainError> {
        let cfg = self.header.config.model.clone();
        let mut params = ModelParams::<T>::zeros(&cfg);
        params.data = self.params.iter().map(|&x| T::of(x)).collect();
        Ok(Model::from_params(cfg, params)?)
    }
}

/// Synthetic bitext produced from target-side monolingual text.
#[derive(Debug, Clone, PartialEq)]
pub struct BackTranslation {
    pub corpus: BitextCorpus,
    /// Sentences that could not be decoded (empty input or output).
    pub skipped: usize,
}

/// Translates each sentence of `mono` into `source_lang` with a reverse
/// model and pairs the output with the original: `(synthetic, original)`.
/// Pairs are shuffled with a seeded RNG.
pub fn generate_back_translations<T: Scalar>(
    model: &Model<T>,
    vocab: &SubwordVocab,
    mono: &MonoCorpus,
    source_lang: &LanguageId,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<BackTranslation, TrainError> {
    decode.validate()?;
    let lid = TargetLid::from_vocab(vocab, source_lang)
        .ok_or_else(|| TrainError::Config(format!("vocabulary has no LID for {source_lang}")))?;
    let mut pairs = Vec::with_capacity(mono.sentences.len());
    let mut skipped = 0;
    for s in &mono.sentences {
        let mut ids = vocab.encode(s).ids;
        if ids.is_empty() {
            skipped += 1;
            continue;
        }
        ids.push(lid.token);
        let out = match beam_decode(model, &ids, decode) {
            Ok(h) => vocab.decode(&h.ids).ok(),
            Err(EvalError::Model(_)) => None,
            Err(e) => return Err(e.into()),
        };
        match out {
            Some(text) if !text.trim().is_empty() => pairs.push((text, s.clone())),
            _ => skipped += 1,
        }
    }
    pairs.shuffle(&mut component_rng(seed, "backtranslate", 0));
    Ok(BackTranslation {
        corpus: BitextCorpus::new(LangPair::new(source_lang.clone(), mono.lang.clone()), pairs),
        skipped,
    })
}
