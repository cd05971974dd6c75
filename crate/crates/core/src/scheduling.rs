//! Task and data scheduling: the dynamic sampling temperature, the dynamic
//! noising ratio, temperature-based pair sampling and the per-update
//! three-task batch mixer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BitextCorpus, CorpusManifest, LangPair, LanguageId};
use crate::noising::{
    make_dae_example, make_mt_example, mask_mlm, DaeConfig, MlmConfig, NoisedExample, TargetLid, Task,
};
use crate::seeding::component_rng;
use crate::tokenizer::{SubwordVocab, TokenId, TokenizedSentence};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("epoch index must be >= 1, got {0}")]
    EpochBelowOne(u64),
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("sampling requires at least one corpus")]
    EmptySizes,
    #[error("corpus {0} has size zero")]
    ZeroSize(String),
    #[error("no data configured for task {0:?}")]
    NoData(Task),
}

/// `T(k) = min(Tm, (k-1)(Tm-T0)/N + T0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub t0: f64,
    pub tm: f64,
    pub warmup_epochs: u64,
}

impl TemperatureSchedule {
    pub fn new(t0: f64, tm: f64, warmup_epochs: u64) -> Result<Self, ScheduleError> {
        let s = TemperatureSchedule { t0, tm, warmup_epochs };
        s.validate()?;
        Ok(s)
    }

    /// A schedule pinned at `t` for every epoch.
    pub fn constant(t: f64) -> Self {
        TemperatureSchedule { t0: t, tm: t, warmup_epochs: 1 }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.t0 > 0.0) || !(self.tm >= self.t0) || !self.tm.is_finite() || self.warmup_epochs < 1 {
            return Err(ScheduleError::Invalid(format!(
                "temperature schedule needs 0 < T0 <= Tm and N >= 1, got T0={} Tm={} N={}",
                self.t0, self.tm, self.warmup_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    MlmMask,
    DaeInfill,
}

/// `R(k) = min(Rm, (k-1)(Rm-R0)/M + R0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub r0: f64,
    pub rm: f64,
    pub warmup_epochs: u64,
    pub applies_to: NoiseTarget,
}

impl NoiseSchedule {
    pub fn new(r0: f64, rm: f64, warmup_epochs: u64, applies_to: NoiseTarget) -> Result<Self, ScheduleError> {
        let s = NoiseSchedule { r0, rm, warmup_epochs, applies_to };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(r: f64, applies_to: NoiseTarget) -> Self {
        NoiseSchedule { r0: r, rm: r, warmup_epochs: 1, applies_to }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(0.0 <= self.r0 && self.r0 <= self.rm && self.rm <= 1.0) || self.warmup_epochs < 1 {
            return Err(ScheduleError::Invalid(format!(
                "noise schedule needs 0 <= R0 <= Rm <= 1 and M >= 1, got R0={} Rm={} M={}",
                self.r0, self.rm, self.warmup_epochs
            )));
        }
        Ok(())
    }
}

fn linear_warmup(start: f64, max: f64, warmup: u64, k: u64) -> Result<f64, ScheduleError> {
    if k < 1 {
        return Err(ScheduleError::EpochBelowOne(k));
    }
    Ok(max.min((k - 1) as f64 * (max - start) / warmup as f64 + start))
}

pub fn temperature_at(sched: &TemperatureSchedule, k: u64) -> Result<f64, ScheduleError> {
    linear_warmup(sched.t0, sched.tm, sched.warmup_epochs, k)
}

pub fn noise_ratio_at(sched: &NoiseSchedule, k: u64) -> Result<f64, ScheduleError> {
    linear_warmup(sched.r0, sched.rm, sched.warmup_epochs, k)
}

/// Probabilities proportional to `(|D_l| / Σ|D_k|)^(1/T)`.
pub fn pair_sampling_probs<K: Ord + Clone + std::fmt::Display>(
    sizes: &BTreeMap<K, usize>,
    temperature: f64,
) -> Result<BTreeMap<K, f64>, ScheduleError> {
    if sizes.is_empty() {
        return Err(ScheduleError::EmptySizes);
    }
    if !(temperature > 0.0) {
        return Err(ScheduleError::Invalid(format!("temperature must be positive, got {temperature}")));
    }
    if let Some((k, _)) = sizes.iter().find(|(_, &n)| n == 0) {
        return Err(ScheduleError::ZeroSize(k.to_string()));
    }
    let total: f64 = sizes.values().map(|&n| n as f64).sum();
    // Log space keeps tiny shares from underflowing at low temperature.
    let logits: Vec<f64> = sizes
        .values()
        .map(|&n| ((n as f64).ln() - total.ln()) / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(sizes.keys().cloned().zip(weights.into_iter().map(|w| w / z)).collect())
}

/// What drives the epoch counter `k` fed to both schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleClock {
    /// One epoch per Σ|D_l| translation instances drawn.
    Epoch,
    /// One unit per `steps_per_unit` updates.
    Steps { steps_per_unit: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub temperature: TemperatureSchedule,
    pub mlm_mask: NoiseSchedule,
    pub dae_infill: NoiseSchedule,
    pub clock: ScheduleClock,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            temperature: TemperatureSchedule { t0: 1.0, tm: 5.0, warmup_epochs: 5 },
            mlm_mask: NoiseSchedule { r0: 0.10, rm: 0.20, warmup_epochs: 5, applies_to: NoiseTarget::MlmMask },
            dae_infill: NoiseSchedule { r0: 0.20, rm: 0.40, warmup_epochs: 5, applies_to: NoiseTarget::DaeInfill },
            clock: ScheduleClock::Epoch,
        }
    }
}

impl Schedules {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        self.temperature.validate()?;
        self.mlm_mask.validate()?;
        self.dae_infill.validate()?;
        if let ScheduleClock::Steps { steps_per_unit: 0 } = self.clock {
            return Err(ScheduleError::Invalid("steps_per_unit must be positive".into()));
        }
        Ok(())
    }

    /// `(T(k), R_mlm(k), R_dae(k))`.
    pub fn at(&self, k: u64) -> Result<(f64, f64, f64), ScheduleError> {
        Ok((
            temperature_at(&self.temperature, k)?,
            noise_ratio_at(&self.mlm_mask, k)?,
            noise_ratio_at(&self.dae_infill, k)?,
        ))
    }
}

/// Which tasks run each update, how large each task batch is and how the
/// task losses are weighted in the sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub tasks: Vec<Task>,
    /// A task batch takes examples until it holds at least this many tokens
    /// (input plus target).
    pub batch_tokens: usize,
    pub loss_weights: BTreeMap<Task, f64>,
}

impl MixPlan {
    pub fn new(tasks: &[Task], batch_tokens: usize) -> Self {
        MixPlan {
            tasks: tasks.to_vec(),
            batch_tokens,
            loss_weights: tasks.iter().map(|&t| (t, 1.0)).collect(),
        }
    }

    pub fn weight(&self, task: Task) -> f64 {
        self.loss_weights.get(&task).copied().unwrap_or(1.0)
    }

    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }
}

/// Tokenized translation corpus for one direction.
#[derive(Debug, Clone)]
pub struct MtCorpus {
    pub pair: LangPair,
    pub lid: TargetLid,
    pub pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

/// Tokenized monolingual corpus feeding MLM or DAE.
#[derive(Debug, Clone)]
pub struct MonoPool {
    pub lang: LanguageId,
    pub lid: TargetLid,
    pub sentences: Vec<TokenizedSentence>,
}

/// All tokenized training data, grouped by task.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub mt: Vec<MtCorpus>,
    pub mlm: Vec<MonoPool>,
    pub dae: Vec<MonoPool>,
}

fn lid_for(vocab: &SubwordVocab, lang: &LanguageId) -> TargetLid {
    TargetLid::from_vocab(vocab, lang).unwrap_or_else(|| panic!("vocabulary has no LID for {lang}"))
}

fn truncated(mut ids: Vec<TokenId>, max_len: usize) -> Vec<TokenId> {
    ids.truncate(max_len);
    ids
}

fn tokenize_pairs(vocab: &SubwordVocab, b: &BitextCorpus, max_len: usize) -> MtCorpus {
    let pairs = b
        .pairs
        .iter()
        .map(|(s, t)| (truncated(vocab.encode(s).ids, max_len), truncated(vocab.encode(t).ids, max_len)))
        .collect();
    MtCorpus {
        pair: b.pair.clone(),
        lid: lid_for(vocab, &b.pair.tgt),
        pairs,
    }
}

impl TaskData {
    /// Tokenizes a manifest. `synthetic` bitext (back-translations) is merged
    /// into the matching direction before sizes are taken. Sentences longer
    /// than `max_len` tokens are truncated, never dropped, so pool sizes equal
    /// the corpus sizes.
    pub fn from_manifest(
        manifest: &CorpusManifest,
        vocab: &SubwordVocab,
        synthetic: &[BitextCorpus],
        max_len: usize,
    ) -> Self {
        let mut merged: Vec<BitextCorpus> = manifest.bitext.clone();
        for s in synthetic {
            match merged.iter_mut().find(|b| b.pair == s.pair) {
                Some(b) => b.pairs.extend(s.pairs.iter().cloned()),
                None => merged.push(s.clone()),
            }
        }
        let mt = merged.iter().map(|b| tokenize_pairs(vocab, b, max_len)).collect();
        let mono = |corpora: Vec<&crate::corpus::MonoCorpus>| -> Vec<MonoPool> {
            corpora
                .into_iter()
                .map(|m| MonoPool {
                    lang: m.lang.clone(),
                    lid: lid_for(vocab, &m.lang),
                    sentences: m
                        .sentences
                        .iter()
                        .map(|s| {
                            let mut t = vocab.encode(s);
                            t.ids.truncate(max_len);
                            t.word_spans.retain_mut(|sp| {
                                sp.1 = sp.1.min(max_len);
                                sp.0 < sp.1
                            });
                            t
                        })
                        .collect(),
                })
                .filter(|p| !p.sentences.is_empty())
                .collect()
        };
        TaskData {
            mt,
            mlm: mono(manifest.mlm_corpora()),
            dae: mono(manifest.dae_corpora()),
        }
    }

    /// Tokenizes validation bitext.
    pub fn valid_from_manifest(manifest: &CorpusManifest, vocab: &SubwordVocab, max_len: usize) -> Vec<MtCorpus> {
        manifest.valid.iter().map(|b| tokenize_pairs(vocab, b, max_len)).collect()
    }

    /// Translation corpus sizes after tokenization; the single source of the
    /// sampler's `|D_l|`.
    pub fn mt_sizes(&self) -> BTreeMap<LangPair, usize> {
        self.mt.iter().map(|c| (c.pair.clone(), c.pairs.len())).collect()
    }

    pub fn mono_sizes(&self, task: Task) -> BTreeMap<LanguageId, usize> {
        let pools = if task == Task::Mlm { &self.mlm } else { &self.dae };
        pools.iter().map(|p| (p.lang.clone(), p.sentences.len())).collect()
    }
}

/// Shuffled cursor over `0..len`, reshuffled on exhaustion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cursor {
    order: Vec<u32>,
    pos: usize,
    pass: u64,
}

impl Cursor {
    fn new(len: usize, seed: u64, name: &str) -> Self {
        let mut c = Cursor { order: (0..len as u32).collect(), pos: 0, pass: 0 };
        c.shuffle(seed, name);
        c
    }

    fn shuffle(&mut self, seed: u64, name: &str) {
        let mut rng = component_rng(seed, name, self.pass);
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self, seed: u64, name: &str) -> usize {
        if self.pos == self.order.len() {
            self.pass += 1;
            self.pos = 0;
            self.shuffle(seed, name);
        }
        self.pos += 1;
        self.order[self.pos - 1] as usize
    }
}

/// Mutable sampler state; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub updates: u64,
    pub mt_drawn: u64,
    pub examples_made: u64,
    rng: ChaCha8Rng,
    mt_cursors: Vec<Cursor>,
    mlm_cursors: Vec<Cursor>,
    dae_cursors: Vec<Cursor>,
}

/// Examples for one task within one update.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub task: Task,
    pub examples: Vec<NoisedExample>,
}

impl TaskBatch {
    pub fn tokens(&self) -> usize {
        self.examples.iter().map(example_tokens).sum()
    }
}

fn example_tokens(e: &NoisedExample) -> usize {
    e.input_ids.len() + e.target_ids.len()
}

/// Schedule values in force for a draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValues {
    pub epoch: u64,
    pub temperature: f64,
    pub mlm_ratio: f64,
    pub dae_ratio: f64,
}

/// Draws per-update task batches from the tokenized data.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    data: TaskData,
    plan: MixPlan,
    schedules: Schedules,
    mlm: MlmConfig,
    dae: DaeConfig,
    seed: u64,
    total_mt: u64,
    state: SamplerState,
}

fn cursor_name(task: Task, i: usize) -> String {
    format!("pool/{}/{i}", task.name())
}

fn draw_index<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * cum.last().copied().unwrap_or(1.0);
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn cumulative<K: Ord + Clone + std::fmt::Display>(
    sizes: &BTreeMap<K, usize>,
    t: f64,
) -> Result<Vec<f64>, ScheduleError> {
    let probs = pair_sampling_probs(sizes, t)?;
    Ok(probs
        .values()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect())
}

impl BatchSampler {
    pub fn new(
        data: TaskData,
        plan: MixPlan,
        schedules: Schedules,
        mlm: MlmConfig,
        dae: DaeConfig,
        seed: u64,
    ) -> Result<Self, ScheduleError> {
        schedules.validate()?;
        mlm.validate().map_err(ScheduleError::Invalid)?;
        dae.validate().map_err(ScheduleError::Invalid)?;
        for &task in &plan.tasks {
            let empty = match task {
                Task::Mt => data.mt.is_empty(),
                Task::Mlm => data.mlm.is_empty(),
                Task::Dae => data.dae.is_empty(),
            };
            if empty {
                return Err(ScheduleError::NoData(task));
            }
        }
        // Pools are addressed in key order so probabilities line up.
        let mut data = data;
        data.mt.sort_by(|a, b| a.pair.cmp(&b.pair));
        data.mlm.sort_by(|a, b| a.lang.cmp(&b.lang));
        data.dae.sort_by(|a, b| a.lang.cmp(&b.lang));
        let cursors = |task: Task, lens: Vec<usize>| -> Vec<Cursor> {
            lens.into_iter()
                .enumerate()
                .map(|(i, n)| Cursor::new(n, seed, &cursor_name(task, i)))
                .collect()
        };
        let state = SamplerState {
            updates: 0,
            mt_drawn: 0,
            examples_made: 0,
            rng: component_rng(seed, "sampler", 0),
            mt_cursors: cursors(Task::Mt, data.mt.iter().map(|c| c.pairs.len()).collect()),
            mlm_cursors: cursors(Task::Mlm, data.mlm.iter().map(|c| c.sentences.len()).collect()),
            dae_cursors: cursors(Task::Dae, data.dae.iter().map(|c| c.sentences.len()).collect()),
        };
        let total_mt = data.mt.iter().map(|c| c.pairs.len() as u64).sum();
        Ok(BatchSampler { data, plan, schedules, mlm, dae, seed, total_mt, state })
    }

    pub fn data(&self) -> &TaskData {
        &self.data
    }

    pub fn plan(&self) -> &MixPlan {
        &self.plan
    }

    pub fn schedules(&self) -> &Schedules {
        &self.schedules
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn restore(&mut self, state: SamplerState) {
        self.state = state;
    }

    /// Current epoch counter `k >= 1`.
    pub fn epoch(&self) -> u64 {
        match self.schedules.clock {
            ScheduleClock::Epoch if self.total_mt > 0 => 1 + self.state.mt_drawn / self.total_mt,
            ScheduleClock::Epoch => 1 + self.state.updates,
            ScheduleClock::Steps { steps_per_unit } => 1 + self.state.updates / steps_per_unit,
        }
    }

    pub fn current_values(&self) -> ScheduleValues {
        let epoch = self.epoch();
        let (temperature, mlm_ratio, dae_ratio) = self.schedules.at(epoch).expect("epoch >= 1");
        ScheduleValues { epoch, temperature, mlm_ratio, dae_ratio }
    }

    fn next_example(&mut self, task: Task, values: &ScheduleValues, cum: &[f64]) -> NoisedExample {
        let pool = draw_index(cum, &mut self.state.rng);
        let mut noise_rng = component_rng(self.seed, "noise", self.state.examples_made);
        self.state.examples_made += 1;
        match task {
            Task::Mt => {
                let i = self.state.mt_cursors[pool].next(self.seed, &cursor_name(task, pool));
                self.state.mt_drawn += 1;
                let c = &self.data.mt[pool];
                make_mt_example(&c.pairs[i].0, &c.pairs[i].1, &c.lid)
            }
            Task::Mlm => {
                let i = self.state.mlm_cursors[pool].next(self.seed, &cursor_name(task, pool));
                let cfg = MlmConfig { mask_ratio: values.mlm_ratio, ..self.mlm };
                mask_mlm(&self.data.mlm[pool].sentences[i], &cfg, &mut noise_rng)
            }
            Task::Dae => {
                let i = self.state.dae_cursors[pool].next(self.seed, &cursor_name(task, pool));
                let cfg = DaeConfig { infill_ratio: values.dae_ratio, ..self.dae };
                let p = &self.data.dae[pool];
                make_dae_example(&p.sentences[i], &cfg, &p.lid, &mut noise_rng)
            }
        }
    }

    /// Draws one batch per planned task. The schedule values are read once
    /// at the start of the update.
    pub fn next_batches(&mut self) -> Result<(ScheduleValues, Vec<TaskBatch>), ScheduleError> {
        let values = self.current_values();
        let mut out = Vec::with_capacity(self.plan.tasks.len());
        for task in self.plan.tasks.clone() {
            let cum = match task {
                Task::Mt => cumulative(&self.data.mt_sizes(), values.temperature)?,
                Task::Mlm | Task::Dae => cumulative(&self.data.mono_sizes(task), values.temperature)?,
            };
            let mut examples = Vec::new();
            let mut tokens = 0;
            while tokens < self.plan.batch_tokens || examples.is_empty() {
                let ex = self.next_example(task, &values, &cum);
                tokens += example_tokens(&ex);
                examples.push(ex);
            }
            out.push(TaskBatch { task, examples });
        }
        self.state.updates += 1;
        Ok((values, out))
    }

    /// Draws only translation instances and returns their directions; used to
    /// audit the pair distribution at a fixed temperature.
    pub fn draw_pairs(&mut self, n: usize, temperature: f64) -> Result<Vec<LangPair>, ScheduleError> {
        let cum = cumulative(&self.data.mt_sizes(), temperature)?;
        Ok((0..n)
            .map(|_| self.data.mt[draw_index(&cum, &mut self.state.rng)].pair.clone())
            .collect())
    }
}

/// One row of the schedule audit table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub epoch: u64,
    pub temperature: f64,
    pub mlm_ratio: f64,
    pub dae_ratio: f64,
    pub probs: BTreeMap<String, f64>,
}

pub fn schedule_table(
    schedules: &Schedules,
    sizes: &BTreeMap<LangPair, usize>,
    epochs: u64,
) -> Result<Vec<ScheduleRow>, ScheduleError> {
    (1..=epochs)
        .map(|k| {
            let (t, rm, rd) = schedules.at(k)?;
            let probs = if sizes.is_empty() {
                BTreeMap::new()
            } else {
                pair_sampling_probs(sizes, t)?
                    .into_iter()
                    .map(|(p, v)| (p.to_string(), v))
                    .collect()
            };
            Ok(ScheduleRow { epoch: k, temperature: t, mlm_ratio: rm, dae_ratio: rd, probs })
        })
        .collect()
}

/// Renders the audit table as aligned text, or tab-separated values when
/// `machine` is set.
pub fn render_schedule_table(rows: &[ScheduleRow], machine: bool) -> String {
    let pairs: Vec<String> = rows.first().map(|r| r.probs.keys().cloned().collect()).unwrap_or_default();
    let mut header = vec!["k".to_string(), "T".into(), "R_mlm".into(), "R_dae".into()];
    header.extend(pairs.iter().map(|p| format!("p({p})")));
    let mut lines = vec![header];
    for r in rows {
        let mut line = vec![
            r.epoch.to_string(),
            format!("{:.6}", r.temperature),
            format!("{:.6}", r.mlm_ratio),
            format!("{:.6}", r.dae_ratio),
        ];
        line.extend(pairs.iter().map(|p| format!("{:.6}", r.probs[p])));
        lines.push(line);
    }
    let mut out = String::new();
    if machine {
        for l in lines {
            writeln!(out, "{}", l.join("\t")).unwrap();
        }
        return out;
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    for l in lines {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(out, "{}", cells.join("  ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Direction, FilterConfig, MonoCorpus, MonoSide};
    use crate::tokenizer::train_vocab;

    fn lang(s: &str) -> LanguageId {
        LanguageId::new(s).unwrap()
    }

    #[test]
    fn temperature_examples() {
        let s = TemperatureSchedule::new(1.0, 5.0, 5).unwrap();
        assert_eq!(temperature_at(&s, 1).unwrap(), 1.0);
        assert!((temperature_at(&s, 3).unwrap() - 2.6).abs() < 1e-12);
        assert_eq!(temperature_at(&s, 6).unwrap(), 5.0);
        assert_eq!(temperature_at(&s, 100).unwrap(), 5.0);
        assert_eq!(temperature_at(&s, 0), Err(ScheduleError::EpochBelowOne(0)));
    }

    #[test]
    fn noise_ratio_examples() {
        let mlm = NoiseSchedule::new(0.10, 0.20, 5, NoiseTarget::MlmMask).unwrap();
        assert_eq!(noise_ratio_at(&mlm, 6).unwrap(), 0.20);
        let dae = NoiseSchedule::new(0.20, 0.40, 5, NoiseTarget::DaeInfill).unwrap();
        assert_eq!(noise_ratio_at(&dae, 1).unwrap(), 0.20);
        let four = NoiseSchedule::new(0.10, 0.20, 4, NoiseTarget::MlmMask).unwrap();
        assert!((noise_ratio_at(&four, 3).unwrap() - 0.15).abs() < 1e-12);
        assert!(noise_ratio_at(&four, 0).is_err());
    }

    #[test]
    fn invalid_schedules() {
        assert!(TemperatureSchedule::new(0.0, 5.0, 5).is_err());
        assert!(TemperatureSchedule::new(2.0, 1.0, 5).is_err());
        assert!(TemperatureSchedule::new(1.0, 5.0, 0).is_err());
        assert!(NoiseSchedule::new(0.3, 0.2, 5, NoiseTarget::MlmMask).is_err());
        assert!(NoiseSchedule::new(0.3, 1.2, 5, NoiseTarget::MlmMask).is_err());
    }

    #[test]
    fn probability_examples() {
        let sizes: BTreeMap<&str, usize> = [("a", 9), ("b", 1)].into_iter().collect();
        let p1 = pair_sampling_probs(&sizes, 1.0).unwrap();
        assert!((p1["a"] - 0.9).abs() < 1e-12 && (p1["b"] - 0.1).abs() < 1e-12);
        let p2 = pair_sampling_probs(&sizes, 2.0).unwrap();
        assert!((p2["a"] - 0.75).abs() < 1e-12 && (p2["b"] - 0.25).abs() < 1e-12);
        let even: BTreeMap<&str, usize> = [("a", 5), ("b", 5)].into_iter().collect();
        for t in [0.5, 1.0, 3.0, 100.0] {
            let p = pair_sampling_probs(&even, t).unwrap();
            assert!((p["a"] - 0.5).abs() < 1e-12);
        }
        assert_eq!(pair_sampling_probs(&BTreeMap::<&str, usize>::new(), 1.0), Err(ScheduleError::EmptySizes));
        let zero: BTreeMap<&str, usize> = [("a", 0)].into_iter().collect();
        assert!(matches!(pair_sampling_probs(&zero, 1.0), Err(ScheduleError::ZeroSize(_))));
    }

    fn toy_manifest(direction: Direction) -> CorpusManifest {
        let bitext = |s: &str, t: &str, n: usize| {
            BitextCorpus::new(
                LangPair::new(lang(s), lang(t)),
                (0..n).map(|i| (format!("{s}{i} {s}x"), format!("{t}{i} {t}y"))).collect(),
            )
        };
        let mono = |l: &str, side| MonoCorpus {
            lang: lang(l),
            side,
            sentences: (0..7).map(|i| format!("{l}m{i} {l}z {l}w")).collect(),
        };
        CorpusManifest {
            languages: vec![lang("de"), lang("en"), lang("fr")],
            direction,
            hub: lang("en"),
            bitext: vec![bitext("de", "en", 9), bitext("fr", "en", 3)],
            valid: vec![],
            mono: vec![mono("de", MonoSide::Source), mono("fr", MonoSide::Source), mono("en", MonoSide::Target)],
            filter: FilterConfig::default(),
        }
    }

    fn sampler(manifest: &CorpusManifest, seed: u64) -> (BatchSampler, SubwordVocab) {
        let text: Vec<String> = manifest
            .bitext
            .iter()
            .flat_map(|b| b.pairs.iter().flat_map(|(s, t)| [s.clone(), t.clone()]))
            .chain(manifest.mono.iter().flat_map(|m| m.sentences.clone()))
            .collect();
        let vocab = train_vocab(&text, &manifest.languages, 300).unwrap();
        let data = TaskData::from_manifest(manifest, &vocab, &[], 64);
        let s = BatchSampler::new(
            data,
            MixPlan::new(&Task::ALL, 1),
            Schedules::default(),
            MlmConfig::default(),
            DaeConfig::default(),
            seed,
        )
        .unwrap();
        (s, vocab)
    }

    #[test]
    fn x2en_routes_mono_by_side() {
        let m = toy_manifest(Direction::X2en);
        let (mut s, vocab) = sampler(&m, 1);
        let en = vocab.lid(&lang("en")).unwrap();
        for _ in 0..50 {
            let (_, batches) = s.next_batches().unwrap();
            assert_eq!(batches.len(), 3);
            for b in &batches {
                for e in &b.examples {
                    match b.task {
                        Task::Dae => assert_eq!(*e.input_ids.last().unwrap(), en),
                        Task::Mt => assert_eq!(e.tgt_lid, Some(lang("en"))),
                        Task::Mlm => {
                            let words = vocab.decode(&e.target_ids).unwrap();
                            assert!(words.starts_with("de") || words.starts_with("fr"), "{words}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn epoch_advances_after_full_pass() {
        let m = toy_manifest(Direction::X2en);
        let (mut s, _) = sampler(&m, 2);
        assert_eq!(s.epoch(), 1);
        // Batch budget 1 token means one example per task per update.
        for _ in 0..12 {
            s.next_batches().unwrap();
        }
        assert_eq!(s.epoch(), 2);
        let v = s.current_values();
        assert!((v.temperature - 1.8).abs() < 1e-12);
    }

    #[test]
    fn replayable_with_fixed_seed() {
        let m = toy_manifest(Direction::X2en);
        let (mut a, _) = sampler(&m, 5);
        let (mut b, _) = sampler(&m, 5);
        for _ in 0..30 {
            assert_eq!(a.next_batches().unwrap(), b.next_batches().unwrap());
        }
        let snapshot = a.state().clone();
        let next_a = a.next_batches().unwrap();
        b.restore(snapshot);
        assert_eq!(b.next_batches().unwrap(), next_a);
    }

    #[test]
    fn missing_task_data_is_an_error() {
        let mut m = toy_manifest(Direction::X2en);
        m.mono.clear();
        let vocab = train_vocab(&["de0 en0"], &m.languages, 100).unwrap();
        let data = TaskData::from_manifest(&m, &vocab, &[], 64);
        let err = BatchSampler::new(
            data,
            MixPlan::new(&Task::ALL, 1),
            Schedules::default(),
            MlmConfig::default(),
            DaeConfig::default(),
            0,
        )
        .unwrap_err();
        assert_eq!(err, ScheduleError::NoData(Task::Mlm));
    }

    #[test]
    fn synthetic_pairs_merge_into_mt_pool() {
        let m = toy_manifest(Direction::X2en);
        let vocab = train_vocab(&["de0 en0 fr0 x y"], &m.languages, 200).unwrap();
        let extra = BitextCorpus::new(
            LangPair::new(lang("de"), lang("en")),
            vec![("x".into(), "y".into()), ("y".into(), "x".into())],
        );
        let data = TaskData::from_manifest(&m, &vocab, &[extra], 64);
        assert_eq!(data.mt_sizes()[&LangPair::new(lang("de"), lang("en"))], 11);
    }

    #[test]
    fn table_renders_both_formats() {
        let sizes: BTreeMap<LangPair, usize> =
            [(LangPair::new(lang("de"), lang("en")), 9), (LangPair::new(lang("fr"), lang("en")), 1)]
                .into_iter()
                .collect();
        let rows = schedule_table(&Schedules::default(), &sizes, 7).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[6].temperature, 5.0);
        let tsv = render_schedule_table(&rows, true);
        assert!(tsv.starts_with("k\tT\tR_mlm\tR_dae\tp(de-en)\tp(fr-en)\n1\t1.000000\t0.100000\t0.200000\t0.900000\t0.100000"));
        assert_eq!(render_schedule_table(&rows, false).lines().count(), 8);
    }
}
