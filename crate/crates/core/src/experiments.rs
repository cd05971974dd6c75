//! End-to-end runs on toy languages: presets, the training pipeline and the
//! comparison summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{filter_monolingual, BitextCorpus, CorpusError, CorpusManifest, Direction, FilterConfig, LangPair, LanguageId, MonoCorpus, MonoSide};
use crate::eval::{beam_decode, bleu, lid_compliance, DecodeConfig};
use crate::model::{Model, ModelConfig, TaskLosses};
use crate::noising::{DaeConfig, MlmConfig, Task, TargetLid};
use crate::scheduling::{MixPlan, MtCorpus, Schedules, TaskData};
use crate::seeding::derive_seed;
use crate::tokenizer::{train_vocab, SubwordVocab};
use crate::toy::ToyWorld;
use crate::trainer::{evaluate_mt, generate_back_translations, OptimConfig, StepRecord, TrainConfig, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset {name:?} (known: {known})")]
    UnknownPreset { name: String, known: String },
    #[error("invalid preset: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Data {
        stage: String,
        #[source]
        source: CorpusError,
    },
    #[error("stage {stage}: {source}")]
    Train {
        stage: String,
        #[source]
        source: TrainError,
    },
    #[error("stage {stage}: {path}: {source}")]
    Io {
        stage: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    fn train(stage: &str) -> impl FnOnce(TrainError) -> Self + '_ {
        move |source| ExperimentError::Train { stage: stage.to_string(), source }
    }

    fn train_from<E: Into<TrainError>>(stage: &str) -> impl FnOnce(E) -> Self + '_ {
        move |e| ExperimentError::Train { stage: stage.to_string(), source: e.into() }
    }
}

/// Which toy corpora to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDataSpec {
    /// The first language is the hub.
    pub languages: Vec<String>,
    pub direction: Direction,
    /// Bitext size between each non-hub language and the hub. In x2x both
    /// directions are trained on the same sentences.
    pub bitext: BTreeMap<String, usize>,
    /// Monolingual sentences per language (before deduplication).
    pub mono: usize,
    /// Held-out pairs per trained direction.
    pub valid: usize,
    /// A direction with no bitext, evaluated for target-language compliance.
    #[serde(default)]
    pub zero_shot: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub back_translation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackTranslationSpec {
    /// Updates spent on the reverse-direction model.
    pub reverse_steps: u64,
    /// Hub-language sentences back-translated into each non-hub language.
    pub mono: usize,
}

/// Pass/fail rules checked after a run. Gains compare the last variant with
/// the first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_train_accuracy: Option<f64>,
    /// Validation accuracy gain on the lowest-resource pair (fraction, not points).
    pub min_valid_gain: Option<f64>,
    pub min_compliance: Option<f64>,
    pub compliance_gain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub description: String,
    pub data: ToyDataSpec,
    pub vocab_size: usize,
    /// `model.vocab_size` is replaced by the trained vocabulary size.
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Validation sentences decoded per pair for BLEU and compliance.
    pub decode_sentences: usize,
    pub back_translation: BackTranslationSpec,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

pub const PRESET_NAMES: [&str; 6] = ["toy-baseline", "toy-mtl", "toy-bt", "toy-bt-mtl", "toy-x2x-zeroshot", "toy-overfit"];

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Desk training defaults for toy runs: one 512-token batch per task and
/// update, 2000 updates, validation every 100.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::desk(0),
        optim: OptimConfig {
            peak_lr: 1e-3,
            warmup_steps: 200,
            accumulation: 1,
            max_steps: 2000,
            eval_every: 100,
            ..OptimConfig::default()
        },
        schedules: Schedules::default(),
        plan: MixPlan::new(&Task::ALL, 512),
        mlm: MlmConfig::default(),
        dae: DaeConfig::default(),
        max_len: 64,
    }
}

fn variant(name: &str, tasks: &[Task], bt: bool) -> Variant {
    Variant { name: name.to_string(), tasks: tasks.to_vec(), back_translation: bt }
}

fn baseline() -> Variant {
    variant("baseline", &[Task::Mt], false)
}

fn mtl() -> Variant {
    variant("+MTL", &Task::ALL, false)
}

fn x2en_data() -> ToyDataSpec {
    ToyDataSpec {
        languages: strings(&["en", "xa", "xb", "xc"]),
        direction: Direction::X2en,
        bitext: [("xa", 400), ("xb", 100), ("xc", 20)].iter().map(|(l, n)| (l.to_string(), *n)).collect(),
        mono: 500,
        valid: 100,
        zero_shot: None,
    }
}

/// Looks up a built-in preset.
pub fn preset(name: &str) -> Result<ExperimentPreset, ExperimentError> {
    let base = ExperimentPreset {
        name: name.to_string(),
        description: String::new(),
        data: x2en_data(),
        vocab_size: 1000,
        train: desk_train_config(),
        decode: DecodeConfig::default(),
        decode_sentences: 100,
        back_translation: BackTranslationSpec { reverse_steps: 1500, mono: 400 },
        variants: vec![baseline()],
        thresholds: Thresholds::default(),
    };
    let p = match name {
        "toy-baseline" => ExperimentPreset {
            description: "x->en, translation only".into(),
            ..base
        },
        "toy-mtl" => ExperimentPreset {
            description: "x->en, translation only vs joint MT+MLM+DAE".into(),
            variants: vec![baseline(), mtl()],
            thresholds: Thresholds { min_valid_gain: Some(0.0), ..Default::default() },
            ..base
        },
        "toy-bt" => ExperimentPreset {
            description: "x->en, translation only vs added back-translations".into(),
            variants: vec![baseline(), variant("+BT", &[Task::Mt], true)],
            ..base
        },
        "toy-bt-mtl" => ExperimentPreset {
            description: "x->en, all four rows: baseline, +MTL, +BT, +BT+MTL".into(),
            variants: vec![
                baseline(),
                mtl(),
                variant("+BT", &[Task::Mt], true),
                variant("+BT+MTL", &Task::ALL, true),
            ],
            ..base
        },
        "toy-x2x-zeroshot" => ExperimentPreset {
            description: "x<->en bitext only, zero-shot xa->xb".into(),
            data: ToyDataSpec {
                languages: strings(&["en", "xa", "xb"]),
                direction: Direction::X2x,
                bitext: [("xa", 200), ("xb", 200)].iter().map(|(l, n)| (l.to_string(), *n)).collect(),
                mono: 500,
                valid: 100,
                zero_shot: Some(("xa".into(), "xb".into())),
            },
            variants: vec![variant("bitext-only", &[Task::Mt], false), mtl()],
            thresholds: Thresholds { min_compliance: Some(0.8), compliance_gain: true, ..Default::default() },
            ..base
        },
        "toy-overfit" => ExperimentPreset {
            description: "x->en, 200 pairs per language, joint training on the training set".into(),
            data: ToyDataSpec {
                bitext: [("xa", 200), ("xb", 200), ("xc", 200)].iter().map(|(l, n)| (l.to_string(), *n)).collect(),
                ..x2en_data()
            },
            train: TrainConfig {
                model: ModelConfig { dropout: 0.0, ..ModelConfig::desk(0) },
                ..desk_train_config()
            },
            decode_sentences: 0,
            variants: vec![mtl()],
            thresholds: Thresholds { min_train_accuracy: Some(0.95), ..Default::default() },
            ..base
        },
        _ => {
            return Err(ExperimentError::UnknownPreset {
                name: name.to_string(),
                known: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(p)
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl ExperimentPreset {
    /// Returns a copy with the keys of `overrides` replacing the preset's
    /// values; tables merge recursively.
    pub fn with_overrides(&self, overrides: &toml::Table) -> Result<Self, ExperimentError> {
        let mut v = toml::Value::try_from(self).map_err(|e| ExperimentError::Config(e.to_string()))?;
        merge(&mut v, &toml::Value::Table(overrides.clone()));
        let p: ExperimentPreset = v.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let d = &self.data;
        if d.languages.len() < 2 || d.languages.len() > 5 {
            return bad(format!("toy runs need 2 to 5 languages, got {}", d.languages.len()));
        }
        for l in d.bitext.keys() {
            if !d.languages[1..].contains(l) {
                return bad(format!("bitext language {l} is not a non-hub language"));
            }
        }
        if d.bitext.values().any(|&n| n == 0) {
            return bad("bitext sizes must be positive".into());
        }
        if let Some((s, t)) = &d.zero_shot {
            if !d.languages.contains(s) || !d.languages.contains(t) || s == t {
                return bad(format!("zero-shot direction {s}->{t} is not between two distinct languages"));
            }
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        for v in &self.variants {
            if !v.tasks.contains(&Task::Mt) {
                return bad(format!("variant {} must include the translation task", v.name));
            }
            if v.back_translation && d.direction != Direction::X2en {
                return bad("back-translation is supported for x2en only".into());
            }
        }
        let mut cfg = self.train.clone();
        cfg.model.vocab_size = self.vocab_size;
        cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.decode.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Generated corpora for one seed.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub world: ToyWorld,
    pub manifest: CorpusManifest,
    /// References for the zero-shot direction.
    pub zero_shot: Option<BitextCorpus>,
    /// Hub-language text to back-translate, one corpus per non-hub language.
    pub bt_mono: Vec<(LanguageId, MonoCorpus)>,
}

fn lang(code: &str) -> Result<LanguageId, ExperimentError> {
    LanguageId::new(code).map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Builds the toy corpora of a preset. Everything derives from `seed`.
pub fn build_toy_data(data: &ToyDataSpec, bt_mono: usize, seed: u64) -> Result<ToyData, ExperimentError> {
    let langs = data.languages.iter().map(|l| lang(l)).collect::<Result<Vec<_>, _>>()?;
    let hub = langs[0].clone();
    let world = ToyWorld::new(&langs, derive_seed(seed, "toy-world", 0));
    let filter = FilterConfig::default();
    let (mut bitext, mut valid, mut mono, mut bt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, x) in langs.iter().enumerate().skip(1) {
        let i = i as u64;
        if let Some(&n) = data.bitext.get(x.as_str()) {
            let forward = match data.direction {
                Direction::X2en | Direction::X2x => LangPair::new(x.clone(), hub.clone()),
                Direction::En2x => LangPair::new(hub.clone(), x.clone()),
            };
            let train = world.bitext(&forward, n, seed, "toy-train", i);
            let held = world.bitext(&forward, data.valid, seed, "toy-valid", i);
            if data.direction == Direction::X2x {
                let flip = |b: &BitextCorpus| {
                    BitextCorpus::new(b.pair.reversed(), b.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect())
                };
                bitext.push(flip(&train));
                valid.push(flip(&held));
            }
            bitext.push(train);
            valid.push(held);
        }
        let side = match data.direction {
            Direction::X2en => MonoSide::Source,
            Direction::En2x => MonoSide::Target,
            Direction::X2x => MonoSide::Both,
        };
        mono.push(world.mono(x, side, data.mono, seed, i));
        if bt_mono > 0 {
            bt.push((x.clone(), world.mono(&hub, MonoSide::Target, bt_mono, seed, 100 + i)));
        }
    }
    match data.direction {
        Direction::X2en => mono.push(world.mono(&hub, MonoSide::Target, data.mono, seed, 0)),
        Direction::En2x => mono.push(world.mono(&hub, MonoSide::Source, data.mono, seed, 0)),
        Direction::X2x => {}
    }
    for m in mono.iter_mut().chain(bt.iter_mut().map(|(_, m)| m)) {
        m.sentences = filter_monolingual(&m.sentences, &filter);
    }
    let zero_shot = match &data.zero_shot {
        Some((s, t)) => {
            let pair = LangPair::new(lang(s)?, lang(t)?);
            Some(world.bitext(&pair, data.valid, seed, "toy-zeroshot", 0))
        }
        None => None,
    };
    let manifest = CorpusManifest {
        languages: langs,
        direction: data.direction,
        hub,
        bitext,
        valid,
        mono,
        filter,
    };
    manifest.validate().map_err(|source| ExperimentError::Data { stage: "prepare-data".into(), source })?;
    Ok(ToyData { world, manifest, zero_shot, bt_mono: bt })
}

/// Trains the shared vocabulary over every training-side sentence.
pub fn vocab_for(data: &ToyData, size: usize) -> Result<SubwordVocab, TrainError> {
    let m = &data.manifest;
    let mut text: Vec<&str> = Vec::new();
    for b in &m.bitext {
        text.extend(b.sources());
        text.extend(b.targets());
    }
    for c in m.mono.iter().chain(data.bt_mono.iter().map(|(_, c)| c)) {
        text.extend(c.sentences.iter().map(String::as_str));
    }
    Ok(train_vocab(&text, &m.languages, size)?)
}

/// Beam-decodes each source into `tgt`.
pub fn translate_all<T: crate::model::Scalar, S: AsRef<str>>(
    model: &Model<T>,
    vocab: &SubwordVocab,
    sources: &[S],
    tgt: &LanguageId,
    decode: &DecodeConfig,
    max_len: usize,
) -> Result<Vec<String>, TrainError> {
    let lid = TargetLid::from_vocab(vocab, tgt).ok_or_else(|| TrainError::Config(format!("vocabulary has no LID for {tgt}")))?;
    let mut out = Vec::with_capacity(sources.len());
    for s in sources {
        let mut ids = vocab.encode(s.as_ref()).ids;
        ids.truncate(max_len);
        if ids.is_empty() {
            out.push(String::new());
            continue;
        }
        ids.push(lid.token);
        let h = beam_decode(model, &ids, decode)?;
        out.push(vocab.decode(&h.ids)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair: String,
    pub train_pairs: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub pair: String,
    pub compliance: f64,
    pub bleu: f64,
    /// Two hops through the hub with the same model.
    pub pivot_compliance: f64,
    pub pivot_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub tasks: Vec<Task>,
    pub updates: u64,
    pub epochs: u64,
    /// Mean task losses over the last 100 updates.
    pub final_losses: TaskLosses,
    /// Teacher-forced accuracy on the genuine training bitext.
    pub train_accuracy: f64,
    pub valid: Vec<PairResult>,
    pub zero_shot: Option<ZeroShotResult>,
    pub synthetic_pairs: usize,
    pub bt_skipped: usize,
    /// JSON lines written during training.
    #[serde(skip)]
    pub metrics: String,
}

impl VariantResult {
    pub fn pair(&self, name: &str) -> Option<&PairResult> {
        self.valid.iter().find(|p| p.pair == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub preset: String,
    pub seed: u64,
    pub lowest_resource_pair: Option<String>,
    pub variants: Vec<VariantResult>,
    pub checks: Vec<Check>,
}

fn mean_tail(records: &[StepRecord], n: usize) -> TaskLosses {
    let tail = &records[records.len().saturating_sub(n)..];
    let m = |f: fn(&StepRecord) -> f64| tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64;
    TaskLosses { mt: m(|r| r.mt), mlm: m(|r| r.mlm), dae: m(|r| r.dae), total: m(|r| r.total) }
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.trim_matches('-').replace("--", "-")
}

struct Run<'a> {
    preset: &'a ExperimentPreset,
    seed: u64,
    data: &'a ToyData,
    vocab: &'a SubwordVocab,
    out: Option<&'a Path>,
}

impl Run<'_> {
    fn config(&self, tasks: &[Task], max_steps: u64) -> TrainConfig {
        let mut cfg = self.preset.train.clone();
        cfg.model.vocab_size = self.vocab.len();
        cfg.optim.seed = self.seed;
        cfg.optim.max_steps = max_steps;
        cfg.plan.tasks = tasks.to_vec();
        cfg
    }

    fn dir(&self, name: &str) -> Option<PathBuf> {
        self.out.map(|o| o.join(slug(name)))
    }

    fn train(
        &self,
        stage: &str,
        cfg: TrainConfig,
        data: TaskData,
        valid: Vec<MtCorpus>,
    ) -> Result<(Model<f32>, Vec<StepRecord>, u64, String), ExperimentError> {
        info!("{stage}: training {} updates on {:?}", cfg.optim.max_steps, cfg.plan.tasks);
        let dir = self.dir(stage);
        let mut trainer = Trainer::<f32>::new(cfg, self.vocab.clone(), data, valid).map_err(ExperimentError::train(stage))?;
        let mut log = Vec::new();
        let records = trainer.run(dir.as_deref(), &mut log).map_err(ExperimentError::train(stage))?;
        let log = String::from_utf8(log).expect("metrics are utf-8");
        if let Some(d) = &dir {
            let path = d.join("metrics.jsonl");
            fs::write(&path, &log).map_err(|source| ExperimentError::Io { stage: stage.into(), path, source })?;
        }
        Ok((trainer.best_model(), records, trainer.epoch(), log))
    }

    fn reverse_model(&self) -> Result<Model<f32>, ExperimentError> {
        let stage = "reverse";
        let flip = |b: &BitextCorpus| {
            BitextCorpus::new(b.pair.reversed(), b.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect())
        };
        let m = &self.data.manifest;
        let reverse = CorpusManifest {
            direction: Direction::En2x,
            bitext: m.bitext.iter().map(flip).collect(),
            valid: m.valid.iter().map(flip).collect(),
            mono: Vec::new(),
            ..m.clone()
        };
        let cfg = self.config(&[Task::Mt], self.preset.back_translation.reverse_steps);
        let data = TaskData::from_manifest(&reverse, self.vocab, &[], cfg.max_len);
        let valid = TaskData::valid_from_manifest(&reverse, self.vocab, cfg.max_len);
        Ok(self.train(stage, cfg, data, valid)?.0)
    }

    fn back_translate(&self, reverse: &Model<f32>) -> Result<(Vec<BitextCorpus>, usize), ExperimentError> {
        let (mut out, mut skipped) = (Vec::new(), 0);
        for (i, (x, mono)) in self.data.bt_mono.iter().enumerate() {
            if !self.preset.data.bitext.contains_key(x.as_str()) {
                continue;
            }
            info!("back-translating {} sentences into {x}", mono.sentences.len());
            let bt = generate_back_translations(
                reverse,
                self.vocab,
                mono,
                x,
                &self.preset.decode,
                derive_seed(self.seed, "bt-shuffle", i as u64),
            )
            .map_err(ExperimentError::train("backtranslate"))?;
            skipped += bt.skipped;
            out.push(bt.corpus);
        }
        Ok((out, skipped))
    }

    fn evaluate(&self, stage: &str, model: &Model<f32>) -> Result<(f64, Vec<PairResult>, Option<ZeroShotResult>), ExperimentError> {
        let max_len = self.preset.train.max_len;
        let m = &self.data.manifest;
        let err = ExperimentError::train_from::<crate::model::ModelError>;
        let genuine = TaskData::from_manifest(m, self.vocab, &[], max_len);
        let train_accuracy = evaluate_mt(model, &genuine.mt).map_err(err(stage))?.accuracy;
        let valid = TaskData::valid_from_manifest(m, self.vocab, max_len);
        let n = self.preset.decode_sentences;
        let mut pairs = Vec::new();
        for (c, b) in valid.iter().zip(&m.valid) {
            let stats = evaluate_mt(model, std::slice::from_ref(c)).map_err(err(stage))?;
            let bleu_score = if n > 0 {
                let srcs: Vec<&str> = b.sources().take(n).collect();
                let refs: Vec<&str> = b.targets().take(n).collect();
                let hyps = translate_all(model, self.vocab, &srcs, &b.pair.tgt, &self.preset.decode, max_len)
                    .map_err(ExperimentError::train(stage))?;
                Some(bleu(&hyps, &refs).map_err(ExperimentError::train_from(stage))?.score)
            } else {
                None
            };
            pairs.push(PairResult {
                pair: b.pair.to_string(),
                train_pairs: m.bitext.iter().find(|t| t.pair == b.pair).map_or(0, |t| t.size()),
                accuracy: stats.accuracy,
                loss: stats.loss,
                bleu: bleu_score,
            });
        }
        let zero_shot = match &self.data.zero_shot {
            Some(z) => {
                let srcs: Vec<&str> = z.sources().take(n.max(1)).collect();
                let refs: Vec<&str> = z.targets().take(n.max(1)).collect();
                let lexicon = self.data.world.language(&z.pair.tgt).lexicon();
                let tr = |s: &[&str], l: &LanguageId| {
                    translate_all(model, self.vocab, s, l, &self.preset.decode, max_len).map_err(ExperimentError::train(stage))
                };
                let direct = tr(&srcs, &z.pair.tgt)?;
                let hub = tr(&srcs, &m.hub)?;
                let hub: Vec<&str> = hub.iter().map(String::as_str).collect();
                let pivot = tr(&hub, &z.pair.tgt)?;
                let score = |h: &[String]| bleu(h, &refs).map(|r| r.score).map_err(ExperimentError::train_from(stage));
                Some(ZeroShotResult {
                    pair: z.pair.to_string(),
                    compliance: lid_compliance(&direct, &lexicon),
                    bleu: score(&direct)?,
                    pivot_compliance: lid_compliance(&pivot, &lexicon),
                    pivot_bleu: score(&pivot)?,
                })
            }
            None => None,
        };
        Ok((train_accuracy, pairs, zero_shot))
    }
}

/// Runs every variant of a preset for one seed. With `out`, corpora,
/// metrics, checkpoints and the summary are written below it.
pub fn run_experiment(preset: &ExperimentPreset, seed: u64, out: Option<&Path>) -> Result<ExperimentSummary, ExperimentError> {
    preset.validate()?;
    let needs_bt = preset.variants.iter().any(|v| v.back_translation);
    let bt_mono = if needs_bt { preset.back_translation.mono } else { 0 };
    let data = build_toy_data(&preset.data, bt_mono, seed)?;
    let vocab = vocab_for(&data, preset.vocab_size).map_err(ExperimentError::train("vocab"))?;
    if let Some(o) = out {
        let dir = o.join("data");
        data.manifest.save(&dir).map_err(|source| ExperimentError::Data { stage: "prepare-data".into(), source })?;
        let path = dir.join("vocab.txt");
        vocab.save(&path).map_err(ExperimentError::train_from("vocab"))?;
    }
    let run = Run { preset, seed, data: &data, vocab: &vocab, out };

    let synthetic = if needs_bt {
        let reverse = run.reverse_model()?;
        Some(run.back_translate(&reverse)?)
    } else {
        None
    };

    let max_len = preset.train.max_len;
    let mut variants = Vec::new();
    for v in &preset.variants {
        let (syn, skipped) = match (&synthetic, v.back_translation) {
            (Some((s, k)), true) => (s.as_slice(), *k),
            _ => (&[][..], 0),
        };
        let cfg = run.config(&v.tasks, preset.train.optim.max_steps);
        let task_data = TaskData::from_manifest(&data.manifest, &vocab, syn, max_len);
        let valid = TaskData::valid_from_manifest(&data.manifest, &vocab, max_len);
        let (model, records, epochs, metrics) = run.train(&v.name, cfg, task_data, valid)?;
        let (train_accuracy, valid, zero_shot) = run.evaluate(&v.name, &model)?;
        variants.push(VariantResult {
            name: v.name.clone(),
            tasks: v.tasks.clone(),
            updates: records.len() as u64,
            epochs,
            final_losses: mean_tail(&records, 100),
            train_accuracy,
            valid,
            zero_shot,
            synthetic_pairs: syn.iter().map(BitextCorpus::size).sum(),
            bt_skipped: skipped,
            metrics,
        });
    }

    let lowest = data
        .manifest
        .bitext
        .iter()
        .min_by_key(|b| (b.size(), b.pair.to_string()))
        .map(|b| b.pair.to_string());
    let mut summary = ExperimentSummary {
        preset: preset.name.clone(),
        seed,
        lowest_resource_pair: lowest,
        variants,
        checks: Vec::new(),
    };
    summary.checks = checks(&summary, &preset.thresholds);
    if let Some(o) = out {
        let write = |name: &str, text: String| {
            let path = o.join(name);
            fs::write(&path, text).map_err(|source| ExperimentError::Io { stage: "summary".into(), path, source })
        };
        write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
        write("summary.md", summary.table())?;
    }
    Ok(summary)
}

fn checks(s: &ExperimentSummary, t: &Thresholds) -> Vec<Check> {
    let mut out = Vec::new();
    let mut check = |name: String, passed: bool, detail: String| out.push(Check { name, passed, detail });
    for v in &s.variants {
        let l = v.final_losses;
        let ran = [(Task::Mt, l.mt), (Task::Mlm, l.mlm), (Task::Dae, l.dae)];
        let finite = ran.iter().filter(|(t, _)| v.tasks.contains(t)).all(|(_, x)| x.is_finite());
        check(format!("{}: finite losses", v.name), finite, format!("{l:?}"));
        if let Some(min) = t.min_train_accuracy {
            check(
                format!("{}: train accuracy >= {min}", v.name),
                v.train_accuracy >= min,
                format!("{:.4}", v.train_accuracy),
            );
        }
    }
    let (first, last) = (&s.variants[0], &s.variants[s.variants.len() - 1]);
    if let (Some(min), Some(pair)) = (t.min_valid_gain, &s.lowest_resource_pair) {
        let acc = |v: &VariantResult| v.pair(pair).map_or(f64::NAN, |p| p.accuracy);
        let gain = acc(last) - acc(first);
        check(
            format!("{} vs {} on {pair}: valid accuracy gain >= {min}", last.name, first.name),
            gain >= min,
            format!("{:.4} - {:.4} = {gain:.4}", acc(last), acc(first)),
        );
    }
    let compliance = |v: &VariantResult| v.zero_shot.as_ref().map_or(f64::NAN, |z| z.compliance);
    if let Some(min) = t.min_compliance {
        check(
            format!("{}: zero-shot compliance >= {min}", last.name),
            compliance(last) >= min,
            format!("{:.4}", compliance(last)),
        );
    }
    if t.compliance_gain {
        check(
            format!("{}: zero-shot compliance above {}", last.name, first.name),
            compliance(last) > compliance(first),
            format!("{:.4} vs {:.4}", compliance(last), compliance(first)),
        );
    }
    out
}

impl ExperimentSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Markdown comparison table, one row per variant.
    pub fn table(&self) -> String {
        let pairs: Vec<&str> = self.variants[0].valid.iter().map(|p| p.pair.as_str()).collect();
        let mut head = vec!["variant".to_string(), "L_MT".into(), "L_MLM".into(), "L_DAE".into(), "train acc".into()];
        for p in &pairs {
            head.push(format!("{p} acc"));
            head.push(format!("{p} BLEU"));
        }
        let zero_shot = self.variants[0].zero_shot.as_ref().map(|z| z.pair.clone());
        if let Some(z) = &zero_shot {
            head.extend([format!("{z} LID"), format!("{z} BLEU"), "pivot LID".into(), "pivot BLEU".into()]);
        }
        head.push("BT pairs".into());
        let mut t = String::new();
        let _ = writeln!(t, "{} (seed {})\n", self.preset, self.seed);
        let _ = writeln!(t, "| {} |", head.join(" | "));
        let _ = writeln!(t, "|{}", "---|".repeat(head.len()));
        for v in &self.variants {
            let loss = |task: Task, x: f64| if v.tasks.contains(&task) { format!("{x:.3}") } else { "-".into() };
            let mut row = vec![
                v.name.clone(),
                loss(Task::Mt, v.final_losses.mt),
                loss(Task::Mlm, v.final_losses.mlm),
                loss(Task::Dae, v.final_losses.dae),
                format!("{:.1}", 100.0 * v.train_accuracy),
            ];
            for p in &pairs {
                match v.pair(p) {
                    Some(r) => {
                        row.push(format!("{:.1}", 100.0 * r.accuracy));
                        row.push(r.bleu.map_or("-".into(), |b| format!("{b:.1}")));
                    }
                    None => row.extend(["-".to_string(), "-".to_string()]),
                }
            }
            if let Some(z) = &v.zero_shot {
                row.extend([
                    format!("{:.2}", z.compliance),
                    format!("{:.1}", z.bleu),
                    format!("{:.2}", z.pivot_compliance),
                    format!("{:.1}", z.pivot_bleu),
                ]);
            }
            row.push(v.synthetic_pairs.to_string());
            let _ = writeln!(t, "| {} |", row.join(" | "));
        }
        if !self.checks.is_empty() {
            let _ = writeln!(t);
            for c in &self.checks {
                let _ = writeln!(t, "{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        t
    }
}
