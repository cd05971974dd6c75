use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};
use log::info;
use mnmt::corpus::{filter_monolingual, load_manifest, BitextCorpus, CorpusError, CorpusManifest, FilterConfig, LangPair, LanguageId, MonoCorpus, MonoSide};
use mnmt::eval::{bleu, DecodeConfig, EvalError, LengthPenalty};
use mnmt::experiments::{build_toy_data, desk_train_config, preset, run_experiment, translate_all, vocab_for, ExperimentError, PRESET_NAMES};
use mnmt::model::ModelError;
use mnmt::noising::{make_dae_example, mask_mlm};
use mnmt::scheduling::{render_schedule_table, schedule_table, TaskData};
use mnmt::seeding::component_rng;
use mnmt::tokenizer::{train_vocab, SubwordVocab, VocabError, UNK};
use mnmt::trainer::{generate_back_translations, Checkpoint, TrainConfig, TrainError, Trainer};
use serde::{Deserialize, Serialize};

macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "mnmt", version, about = "Multi-task multilingual NMT: MT + masked LM + denoising auto-encoding")]
struct Cli {
    /// Log filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate toy corpora (or read a manifest), train the vocabulary and report token statistics.
    PrepareData(PrepareArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Translate target-side monolingual text with a reverse model into synthetic bitext.
    Backtranslate(BacktranslateArgs),
    /// Beam-decode a file of sentences.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    ScoreBleu(ScoreArgs),
    /// Print T(k), R(k) and pair sampling probabilities per epoch.
    InspectSchedule(ScheduleArgs),
    /// Run a toy experiment preset end to end and check its thresholds.
    RunExperiment(ExperimentArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Toy preset whose corpora are generated.
    #[arg(long, default_value = "toy-mtl", conflicts_with = "manifest")]
    preset: String,
    /// Use an existing manifest instead of generating toy corpora.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// TOML overrides for the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary size (default: preset value, or 1000 with --manifest).
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Threads used to tokenize corpora for the statistics.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write this many noised MLM and DAE examples per corpus to noised.jsonl.
    #[arg(long, default_value_t = 0)]
    dump_noised: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML training config; keys override the desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Existing vocabulary; trained from the manifest when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Back-translation output prefix to merge into the bitext (repeatable).
    #[arg(long)]
    synthetic: Vec<PathBuf>,
    /// Continue from a checkpoint written by an earlier run on the same data.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Length penalty exponent.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Length penalty form: simple (len^alpha) or gnmt (((5+len)/6)^alpha).
    #[arg(long, default_value = "simple")]
    penalty: String,
    /// Maximum output length is floor(a * source length) + b.
    #[arg(long, default_value_t = 1.5)]
    max_len_a: f64,
    #[arg(long, default_value_t = 10)]
    max_len_b: usize,
}

impl DecodeArgs {
    fn config(&self) -> Result<DecodeConfig, CliError> {
        let penalty = match self.penalty.as_str() {
            "simple" => LengthPenalty::Simple,
            "gnmt" => LengthPenalty::Gnmt,
            other => return Err(CliError::Usage(format!("unknown length penalty {other:?}"))),
        };
        let cfg = DecodeConfig {
            beam_size: self.beam,
            alpha: self.alpha,
            penalty,
            max_len_a: self.max_len_a,
            max_len_b: self.max_len_b,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BacktranslateArgs {
    /// Reverse-direction checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Target-side monolingual text, one sentence per line.
    #[arg(long)]
    mono: PathBuf,
    /// Writes PREFIX.src, PREFIX.tgt and PREFIX.json.
    #[arg(long)]
    out: PathBuf,
    /// Language of the monolingual text.
    #[arg(long, default_value = "en")]
    mono_lang: String,
    /// Language to translate into (the synthetic source side).
    #[arg(long)]
    src_lang: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt_lang: String,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScheduleArgs {
    /// TOML training config whose schedules are shown.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest whose bitext sizes feed the sampling probabilities.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: u64,
    /// Tab-separated output.
    #[arg(long)]
    machine: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// One of toy-baseline, toy-mtl, toy-bt, toy-bt-mtl, toy-x2x-zeroshot, toy-overfit.
    #[arg(long)]
    preset: String,
    /// TOML overrides for the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Print the preset as TOML and exit.
    #[arg(long)]
    show: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
    Threshold(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Threshold(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Threshold(m) => write!(f, "threshold failure: {m}"),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFinite { .. } | TrainError::Model(ModelError::NonFinite { .. }) => {
                CliError::Numerical(e.to_string())
            }
            TrainError::Config(_) | TrainError::StepBelowOne(_) | TrainError::Schedule(_) => CliError::Usage(e.to_string()),
            TrainError::Eval(EvalError::Config(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train { stage, source } => match CliError::from(source) {
                CliError::Numerical(m) => CliError::Numerical(format!("stage {stage}: {m}")),
                CliError::Usage(m) => CliError::Usage(format!("stage {stage}: {m}")),
                other => CliError::Data(format!("stage {stage}: {}", other.message())),
            },
            ExperimentError::Data { .. } | ExperimentError::Io { .. } => CliError::Data(e.to_string()),
            ExperimentError::UnknownPreset { .. } | ExperimentError::Config(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl CliError {
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) | CliError::Threshold(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    toml::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn lang(code: &str) -> Result<LanguageId, CliError> {
    LanguageId::new(code).map_err(|e| CliError::Usage(e.to_string()))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Desk defaults overridden by a config file. A top-level `vocab_size`
/// key is returned separately.
fn train_config(path: Option<&Path>) -> Result<(TrainConfig, Option<usize>), CliError> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    let vocab_size = match table.remove("vocab_size") {
        Some(v) => Some(
            v.as_integer()
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| CliError::Usage("vocab_size must be a positive integer".into()))?,
        ),
        None => None,
    };
    let mut v = toml::Value::try_from(desk_train_config()).expect("defaults serialize");
    merge(&mut v, toml::Value::Table(table));
    let cfg = v.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
    Ok((cfg, vocab_size))
}

#[derive(Serialize, Deserialize)]
struct SyntheticMeta {
    src: String,
    tgt: String,
    pairs: usize,
    skipped: usize,
}

fn manifest_text(m: &CorpusManifest) -> Vec<&str> {
    let mut text: Vec<&str> = Vec::new();
    for b in &m.bitext {
        text.extend(b.sources());
        text.extend(b.targets());
    }
    for c in &m.mono {
        text.extend(c.sentences.iter().map(String::as_str));
    }
    text
}

#[derive(Serialize)]
struct CorpusStats {
    name: String,
    sentences: usize,
    tokens: usize,
    unknown: usize,
}

/// Token and UNK counts per corpus, tokenized on `workers` threads. Chunks
/// are merged in their original order.
fn token_stats(vocab: &SubwordVocab, corpora: &[(String, Vec<&str>)], workers: usize) -> Vec<CorpusStats> {
    corpora
        .iter()
        .map(|(name, sents)| {
            let chunk = sents.len().div_ceil(workers.max(1)).max(1);
            let parts: Vec<(usize, usize)> = thread::scope(|s| {
                let handles: Vec<_> = sents
                    .chunks(chunk)
                    .map(|c| {
                        s.spawn(move || {
                            c.iter().fold((0, 0), |(t, u), s| {
                                let ids = vocab.encode(s).ids;
                                (t + ids.len(), u + ids.iter().filter(|&&i| i == UNK).count())
                            })
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            CorpusStats {
                name: name.clone(),
                sentences: sents.len(),
                tokens: parts.iter().map(|p| p.0).sum(),
                unknown: parts.iter().map(|p| p.1).sum(),
            }
        })
        .collect()
}

fn prepare_data(a: PrepareArgs) -> Result<(), CliError> {
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    let (manifest, vocab) = match &a.manifest {
        Some(path) => {
            let m = load_manifest(path)?;
            let vocab = train_vocab(&manifest_text(&m), &m.languages, a.vocab_size.unwrap_or(1000))?;
            (m, vocab)
        }
        None => {
            let mut p = preset(&a.preset)?;
            if let Some(c) = &a.config {
                p = p.with_overrides(&read_table(c)?)?;
            }
            if let Some(v) = a.vocab_size {
                p.vocab_size = v;
            }
            let data = build_toy_data(&p.data, 0, a.seed)?;
            let path = data.manifest.save(&a.out)?;
            say!("manifest {}", path.display());
            let vocab = vocab_for(&data, p.vocab_size)?;
            (data.manifest, vocab)
        }
    };
    let vocab_path = a.out.join("vocab.txt");
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    vocab.save(&vocab_path)?;
    say!("vocab {} ({} entries)", vocab_path.display(), vocab.len());

    let mut corpora: Vec<(String, Vec<&str>)> = Vec::new();
    for b in &manifest.bitext {
        corpora.push((format!("train {} {}", b.pair, b.pair.src), b.sources().collect()));
        corpora.push((format!("train {} {}", b.pair, b.pair.tgt), b.targets().collect()));
    }
    for m in &manifest.mono {
        corpora.push((format!("mono {}", m.lang), m.sentences.iter().map(String::as_str).collect()));
    }
    let stats = token_stats(&vocab, &corpora, a.workers);
    for s in &stats {
        say!("{:<24} {:>7} sentences {:>9} tokens {:>6} unk", s.name, s.sentences, s.tokens, s.unknown);
    }
    write_text(&a.out.join("stats.json"), &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;

    if a.dump_noised > 0 {
        let (cfg, _) = train_config(None)?;
        let data = TaskData::from_manifest(&manifest, &vocab, &[], cfg.max_len);
        let mut rng = component_rng(a.seed, "noised-dump", 0);
        let mut lines = Vec::new();
        for pool in &data.mlm {
            for s in pool.sentences.iter().take(a.dump_noised) {
                lines.push(mask_mlm(s, &cfg.mlm, &mut rng).debug_record(&vocab));
            }
        }
        for pool in &data.dae {
            for s in pool.sentences.iter().take(a.dump_noised) {
                lines.push(make_dae_example(s, &cfg.dae, &pool.lid, &mut rng).debug_record(&vocab));
            }
        }
        lines.push(String::new());
        write_text(&a.out.join("noised.jsonl"), &lines.join("\n"))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let mut synthetic = Vec::new();
    for prefix in &a.synthetic {
        let meta: SyntheticMeta = serde_json::from_str(&read_text(&with_suffix(prefix, "json"))?)
            .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
        let pair = LangPair::new(lang(&meta.src)?, lang(&meta.tgt)?);
        let src = with_suffix(prefix, "src");
        let tgt = with_suffix(prefix, "tgt");
        synthetic.push(mnmt::corpus::read_bitext(pair, &src, &tgt)?);
    }

    let (trainer, metrics_mode) = match &a.resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::read(ckpt_path)?;
            let vocab = ckpt.vocab()?;
            let max_len = ckpt.header.config.max_len;
            let data = TaskData::from_manifest(&manifest, &vocab, &synthetic, max_len);
            let valid = TaskData::valid_from_manifest(&manifest, &vocab, max_len);
            let mut t = Trainer::<f32>::resume(ckpt, data, valid)?;
            if let Some(m) = a.max_steps {
                t.set_max_steps(m);
            }
            (t, true)
        }
        None => {
            let (mut cfg, file_vocab) = train_config(a.config.as_deref())?;
            cfg.optim.seed = a.seed;
            if let Some(m) = a.max_steps {
                cfg.optim.max_steps = m;
            }
            let vocab = match &a.vocab {
                Some(p) => SubwordVocab::load(p)?,
                None => {
                    let size = a.vocab_size.or(file_vocab).unwrap_or(1000);
                    let mut text = manifest_text(&manifest);
                    for s in &synthetic {
                        text.extend(s.sources());
                    }
                    train_vocab(&text, &manifest.languages, size)?
                }
            };
            cfg.model.vocab_size = vocab.len();
            let data = TaskData::from_manifest(&manifest, &vocab, &synthetic, cfg.max_len);
            let valid = TaskData::valid_from_manifest(&manifest, &vocab, cfg.max_len);
            (Trainer::<f32>::new(cfg, vocab, data, valid)?, false)
        }
    };
    let mut trainer = trainer;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    trainer.vocab().save(&a.out.join("vocab.txt"))?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(metrics_mode)
        .write(true)
        .truncate(!metrics_mode)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;
    info!(
        "training {} -> {} updates, {} parameters",
        trainer.steps_done(),
        trainer.config().optim.max_steps,
        trainer.model().params.len()
    );
    let records = trainer.run(Some(&a.out), &mut metrics)?;
    if let Some(r) = records.last() {
        say!(
            "step {} k {} L_MT {:.4} L_MLM {:.4} L_DAE {:.4} best valid L_MT {}",
            r.step,
            r.k,
            r.mt,
            r.mlm,
            r.dae,
            trainer.best_valid().map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    say!("checkpoint {}", a.out.join("last.ckpt").display());
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<(mnmt::model::Model<f32>, SubwordVocab, usize), CliError> {
    let ckpt = Checkpoint::read(path)?;
    Ok((ckpt.model::<f32>()?, ckpt.vocab()?, ckpt.header.config.max_len))
}

fn backtranslate(a: BacktranslateArgs) -> Result<(), CliError> {
    let decode = a.decode.config()?;
    let (model, vocab, _) = load_model(&a.model)?;
    let lines = read_lines(&a.mono)?;
    let mono = MonoCorpus {
        lang: lang(&a.mono_lang)?,
        side: MonoSide::Target,
        sentences: filter_monolingual(&lines, &FilterConfig::default()),
    };
    let src = lang(&a.src_lang)?;
    let bt = generate_back_translations(&model, &vocab, &mono, &src, &decode, a.seed)?;
    let BitextCorpus { pair, pairs } = bt.corpus;
    let join = |side: fn(&(String, String)) -> &String| {
        pairs.iter().map(|p| format!("{}\n", side(p))).collect::<String>()
    };
    write_text(&with_suffix(&a.out, "src"), &join(|p| &p.0))?;
    write_text(&with_suffix(&a.out, "tgt"), &join(|p| &p.1))?;
    let meta = SyntheticMeta { src: pair.src.to_string(), tgt: pair.tgt.to_string(), pairs: pairs.len(), skipped: bt.skipped };
    write_text(&with_suffix(&a.out, "json"), &serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    say!("{} synthetic pairs {}, {} skipped", meta.pairs, pair, meta.skipped);
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<(), CliError> {
    let decode = a.decode.config()?;
    let (model, vocab, max_len) = load_model(&a.model)?;
    let tgt = lang(&a.tgt_lang)?;
    if vocab.lid(&tgt).is_none() {
        return Err(CliError::Usage(format!("the model has no language tag for {tgt}")));
    }
    let sources = read_lines(&a.src)?;
    let out = translate_all(&model, &vocab, &sources, &tgt, &decode, max_len)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for line in out {
        if writeln!(w, "{line}").is_err() {
            break;
        }
    }
    Ok(())
}

fn score_bleu(a: ScoreArgs) -> Result<(), CliError> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let report = bleu(&hyps, &refs).map_err(|e| CliError::Data(e.to_string()))?;
    if a.json {
        say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        say!("{}", report.summary());
    }
    Ok(())
}

fn inspect_schedule(a: ScheduleArgs) -> Result<(), CliError> {
    let (cfg, _) = train_config(a.config.as_deref())?;
    let sizes = match &a.manifest {
        Some(p) => mnmt::corpus::corpus_sizes(&load_manifest(p)?),
        None => Default::default(),
    };
    let rows = schedule_table(&cfg.schedules, &sizes, a.epochs).map_err(|e| CliError::Usage(e.to_string()))?;
    say!("{}", render_schedule_table(&rows, a.machine).trim_end());
    Ok(())
}

fn run_experiment_cmd(a: ExperimentArgs) -> Result<(), CliError> {
    let mut p = preset(&a.preset)?;
    if let Some(c) = &a.config {
        p = p.with_overrides(&read_table(c)?)?;
    }
    if let Some(m) = a.max_steps {
        p.train.optim.max_steps = m;
    }
    if a.show {
        say!("{}", toml::to_string(&p).expect("preset serializes").trim_end());
        return Ok(());
    }
    let summary = run_experiment(&p, a.seed, a.out.as_deref())?;
    say!("{}", summary.table().trim_end());
    if summary.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = summary.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Threshold(failed.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    let result = match cli.command {
        Command::PrepareData(a) => prepare_data(a),
        Command::Train(a) => train(a),
        Command::Backtranslate(a) => backtranslate(a),
        Command::Translate(a) => translate(a),
        Command::ScoreBleu(a) => score_bleu(a),
        Command::InspectSchedule(a) => inspect_schedule(a),
        Command::RunExperiment(a) => {
            if !PRESET_NAMES.contains(&a.preset.as_str()) {
                Err(CliError::Usage(format!("unknown preset {:?} (known: {})", a.preset, PRESET_NAMES.join(", "))))
            } else {
                run_experiment_cmd(a)
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mnmt: {e}");
            ExitCode::from(e.code())
        }
    }
}
