//! Corpus ingestion: manifests, bitext and monolingual files, filtration.
//!
//! Files are plain UTF-8 text with one sentence per line. A bitext corpus is
//! two files aligned by line number. The manifest is a TOML file:
//!
//! ```toml
//! version = 1
//! languages = ["de", "en"]
//! direction = "x2en"
//!
//! [[bitext]]
//! src = "de"
//! tgt = "en"
//! src_file = "train.de"
//! tgt_file = "train.en"
//!
//! [[mono]]
//! lang = "de"
//! side = "source"
//! file = "mono.de"
//!
//! [filter]
//! max_punct_fraction = 0.5
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Manifest schema version understood by this build.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("unsupported manifest version {found} (expected {MANIFEST_VERSION})")]
    Version { found: u32 },
    #[error("invalid language code {0:?}")]
    InvalidLanguage(String),
    #[error("language {0:?} declared twice")]
    DuplicateLanguage(String),
    #[error("unknown language {0:?} (not listed under `languages`)")]
    UnknownLanguage(String),
    #[error("bitext pair {0} declared twice")]
    DuplicatePair(LangPair),
    #[error("bitext {pair} misaligned: {src_lines} source lines vs {tgt_lines} target lines")]
    Misaligned {
        pair: LangPair,
        src_lines: usize,
        tgt_lines: usize,
    },
    #[error("monolingual corpus for {lang:?} declared as {side:?} but direction {direction:?} does not use it on that side")]
    SideMismatch {
        lang: String,
        side: MonoSide,
        direction: Direction,
    },
}

/// Short lowercase language code, e.g. `de`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: &str) -> Result<Self, CorpusError> {
        let valid = !code.is_empty()
            && code
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if valid {
            Ok(LanguageId(code.to_string()))
        } else {
            Err(CorpusError::InvalidLanguage(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageId {
    type Error = CorpusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        LanguageId::new(&value)
    }
}

impl From<LanguageId> for String {
    fn from(value: LanguageId) -> Self {
        value.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Translation direction of a bitext corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LangPair {
    pub src: LanguageId,
    pub tgt: LanguageId,
}

impl LangPair {
    pub fn new(src: LanguageId, tgt: LanguageId) -> Self {
        LangPair { src, tgt }
    }

    pub fn reversed(&self) -> Self {
        LangPair::new(self.tgt.clone(), self.src.clone())
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Many-to-English.
    X2en,
    /// English-to-many.
    En2x,
    /// Many-to-many.
    X2x,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonoSide {
    Source,
    Target,
    Both,
}

impl MonoSide {
    pub fn feeds_source(self) -> bool {
        matches!(self, MonoSide::Source | MonoSide::Both)
    }

    pub fn feeds_target(self) -> bool {
        matches!(self, MonoSide::Target | MonoSide::Both)
    }
}

/// Parallel corpus for one direction. `pairs.len()` is the corpus size.
#[derive(Debug, Clone, PartialEq)]
pub struct BitextCorpus {
    pub pair: LangPair,
    pub pairs: Vec<(String, String)>,
}

impl BitextCorpus {
    pub fn new(pair: LangPair, pairs: Vec<(String, String)>) -> Self {
        BitextCorpus { pair, pairs }
    }

    pub fn size(&self) -> usize {
        self.pairs.len()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(s, _)| s.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(_, t)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoCorpus {
    pub lang: LanguageId,
    pub side: MonoSide,
    pub sentences: Vec<String>,
}

/// Monolingual filtration rules. Defaults: punctuation fraction at most 0.5,
/// 1 to 250 words, duplicates removed, control characters rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub dedup: bool,
    pub max_punct_fraction: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Extra characters rejected in addition to control characters.
    pub forbidden_chars: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            dedup: true,
            max_punct_fraction: 0.5,
            min_words: 1,
            max_words: 250,
            forbidden_chars: String::new(),
        }
    }
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¡' | '¿' | '«' | '»' | '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '„' | '·' | '。' | '、'
        )
}

impl FilterConfig {
    /// Returns the normalized sentence if it survives every per-line rule.
    fn accept(&self, raw: &str) -> Option<String> {
        let line = normalize_whitespace(raw);
        let words = line.split(' ').filter(|w| !w.is_empty()).count();
        if words < self.min_words || words > self.max_words {
            return None;
        }
        if line
            .chars()
            .any(|c| c.is_control() || self.forbidden_chars.contains(c))
        {
            return None;
        }
        let visible = line.chars().filter(|c| !c.is_whitespace()).count();
        let punct = line.chars().filter(|&c| is_punctuation(c)).count();
        if visible > 0 && punct as f64 / visible as f64 > self.max_punct_fraction {
            return None;
        }
        Some(line)
    }
}

/// Applies the filtration rules, keeping survivors in input order.
/// Survivors are whitespace-normalized; duplicates are detected after
/// normalization.
pub fn filter_monolingual<S: AsRef<str>>(sentences: &[S], rules: &FilterConfig) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for raw in sentences {
        let Some(line) = rules.accept(raw.as_ref()) else {
            continue;
        };
        if rules.dedup && !seen.insert(line.clone()) {
            continue;
        }
        out.push(line);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBitext {
    src: String,
    tgt: String,
    src_file: PathBuf,
    tgt_file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMono {
    lang: String,
    side: MonoSide,
    file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    version: u32,
    languages: Vec<String>,
    direction: Direction,
    #[serde(default = "default_hub")]
    hub: String,
    #[serde(default)]
    bitext: Vec<RawBitext>,
    #[serde(default)]
    valid: Vec<RawBitext>,
    #[serde(default)]
    mono: Vec<RawMono>,
    #[serde(default)]
    filter: FilterConfig,
}

fn default_hub() -> String {
    "en".to_string()
}

/// A loaded manifest with every referenced corpus read into memory.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub languages: Vec<LanguageId>,
    pub direction: Direction,
    /// The English-like hub language of x2en/en2x/x2x setups.
    pub hub: LanguageId,
    pub bitext: Vec<BitextCorpus>,
    pub valid: Vec<BitextCorpus>,
    pub mono: Vec<MonoCorpus>,
    pub filter: FilterConfig,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}

/// Reads two aligned files. Pairs with an empty side are dropped.
pub fn read_bitext(pair: LangPair, src_file: &Path, tgt_file: &Path) -> Result<BitextCorpus, CorpusError> {
    let src = read_lines(src_file)?;
    let tgt = read_lines(tgt_file)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::Misaligned {
            pair,
            src_lines: src.len(),
            tgt_lines: tgt.len(),
        });
    }
    let pairs = src
        .into_iter()
        .zip(tgt)
        .map(|(s, t)| (normalize_whitespace(&s), normalize_whitespace(&t)))
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .collect();
    Ok(BitextCorpus::new(pair, pairs))
}

impl CorpusManifest {
    /// Source-side languages (MLM) for the manifest's direction.
    pub fn source_side_languages(&self) -> Vec<LanguageId> {
        match self.direction {
            Direction::En2x => vec![self.hub.clone()],
            Direction::X2en | Direction::X2x => self.non_hub(),
        }
    }

    /// Target-side languages (DAE) for the manifest's direction.
    pub fn target_side_languages(&self) -> Vec<LanguageId> {
        match self.direction {
            Direction::X2en => vec![self.hub.clone()],
            Direction::En2x | Direction::X2x => self.non_hub(),
        }
    }

    fn non_hub(&self) -> Vec<LanguageId> {
        self.languages
            .iter()
            .filter(|l| **l != self.hub)
            .cloned()
            .collect()
    }

    /// Monolingual corpora feeding the masked-LM task.
    pub fn mlm_corpora(&self) -> Vec<&MonoCorpus> {
        let langs = self.source_side_languages();
        self.mono
            .iter()
            .filter(|m| m.side.feeds_source() && langs.contains(&m.lang))
            .collect()
    }

    /// Monolingual corpora feeding the denoising auto-encoding task.
    pub fn dae_corpora(&self) -> Vec<&MonoCorpus> {
        let langs = self.target_side_languages();
        self.mono
            .iter()
            .filter(|m| m.side.feeds_target() && langs.contains(&m.lang))
            .collect()
    }

    /// Checks the cross-references between languages, pairs and corpora.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut langs = BTreeSet::new();
        for l in &self.languages {
            if !langs.insert(l) {
                return Err(CorpusError::DuplicateLanguage(l.to_string()));
            }
        }
        if !langs.contains(&self.hub) && self.direction != Direction::X2x {
            return Err(CorpusError::UnknownLanguage(self.hub.to_string()));
        }
        let mut pairs = BTreeSet::new();
        for b in &self.bitext {
            for l in [&b.pair.src, &b.pair.tgt] {
                if !langs.contains(l) {
                    return Err(CorpusError::UnknownLanguage(l.to_string()));
                }
            }
            if !pairs.insert(&b.pair) {
                return Err(CorpusError::DuplicatePair(b.pair.clone()));
            }
        }
        for b in &self.valid {
            for l in [&b.pair.src, &b.pair.tgt] {
                if !langs.contains(l) {
                    return Err(CorpusError::UnknownLanguage(l.to_string()));
                }
            }
        }
        let src_side = self.source_side_languages();
        let tgt_side = self.target_side_languages();
        for m in &self.mono {
            if !langs.contains(&m.lang) {
                return Err(CorpusError::UnknownLanguage(m.lang.to_string()));
            }
            let usable = (m.side.feeds_source() && src_side.contains(&m.lang))
                || (m.side.feeds_target() && tgt_side.contains(&m.lang));
            if !usable {
                return Err(CorpusError::SideMismatch {
                    lang: m.lang.to_string(),
                    side: m.side,
                    direction: self.direction,
                });
            }
        }
        Ok(())
    }
}

/// Loads a manifest and every corpus it references. Monolingual files are
/// passed through [`filter_monolingual`] with the manifest's rules.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawManifest = toml::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if raw.version != MANIFEST_VERSION {
        return Err(CorpusError::Version { found: raw.version });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let languages = raw
        .languages
        .iter()
        .map(|l| LanguageId::new(l))
        .collect::<Result<Vec<_>, _>>()?;
    let known: BTreeSet<&LanguageId> = languages.iter().collect();
    let lookup = |code: &str| -> Result<LanguageId, CorpusError> {
        let id = LanguageId::new(code)?;
        if known.contains(&id) {
            Ok(id)
        } else {
            Err(CorpusError::UnknownLanguage(code.to_string()))
        }
    };

    let read_pairs = |entries: &[RawBitext]| -> Result<Vec<BitextCorpus>, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for b in entries {
            let pair = LangPair::new(lookup(&b.src)?, lookup(&b.tgt)?);
            if !seen.insert(pair.clone()) {
                return Err(CorpusError::DuplicatePair(pair));
            }
            out.push(read_bitext(pair, &resolve(&b.src_file), &resolve(&b.tgt_file))?);
        }
        Ok(out)
    };
    let bitext = read_pairs(&raw.bitext)?;
    let valid = read_pairs(&raw.valid)?;

    let mut mono = Vec::new();
    for m in &raw.mono {
        let lang = lookup(&m.lang)?;
        let lines = read_lines(&resolve(&m.file))?;
        mono.push(MonoCorpus {
            lang,
            side: m.side,
            sentences: filter_monolingual(&lines, &raw.filter),
        });
    }

    let manifest = CorpusManifest {
        hub: LanguageId::new(&raw.hub)?,
        languages,
        direction: raw.direction,
        bitext,
        valid,
        mono,
        filter: raw.filter,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<(), CorpusError> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl CorpusManifest {
    /// Writes every corpus as plain text under `dir` together with a
    /// `manifest.toml` that [`load_manifest`] reads back. Returns the
    /// manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let write_pairs = |corpora: &[BitextCorpus], split: &str| -> Result<Vec<RawBitext>, CorpusError> {
            let mut out = Vec::new();
            for b in corpora {
                let (s, t) = (&b.pair.src, &b.pair.tgt);
                let src_file = PathBuf::from(format!("{split}.{s}-{t}.{s}"));
                let tgt_file = PathBuf::from(format!("{split}.{s}-{t}.{t}"));
                write_lines(&dir.join(&src_file), b.sources())?;
                write_lines(&dir.join(&tgt_file), b.targets())?;
                out.push(RawBitext { src: s.to_string(), tgt: t.to_string(), src_file, tgt_file });
            }
            Ok(out)
        };
        let bitext = write_pairs(&self.bitext, "train")?;
        let valid = write_pairs(&self.valid, "valid")?;
        let mut mono = Vec::new();
        for (i, m) in self.mono.iter().enumerate() {
            let file = PathBuf::from(format!("mono{i}.{}", m.lang));
            write_lines(&dir.join(&file), m.sentences.iter().map(String::as_str))?;
            mono.push(RawMono { lang: m.lang.to_string(), side: m.side, file });
        }
        let raw = RawManifest {
            version: MANIFEST_VERSION,
            languages: self.languages.iter().map(|l| l.to_string()).collect(),
            direction: self.direction,
            hub: self.hub.to_string(),
            bitext,
            valid,
            mono,
            filter: self.filter.clone(),
        };
        let path = dir.join("manifest.toml");
        let text = toml::to_string(&raw).map_err(|e| CorpusError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        write_lines(&path, std::iter::once(text.trim_end()))?;
        Ok(path)
    }
}

/// Retained pair counts per direction. The sampler consumes exactly this map.
pub fn corpus_sizes(manifest: &CorpusManifest) -> BTreeMap<LangPair, usize> {
    manifest
        .bitext
        .iter()
        .map(|b| (b.pair.clone(), b.size()))
        .collect()
}
