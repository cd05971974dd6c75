//! Masked-LM masking and the denoising noise model (text infilling, word
//! drop/blank, bounded word swapping).
//!
//! DAE noise works on word units: a word is the list of subword ids of one
//! whitespace token, and a BLANK is a unit of its own.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::LanguageId;
use crate::tokenizer::{SubwordVocab, TokenId, TokenizedSentence, BLANK, MASK};

pub type WordUnit = Vec<TokenId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mt,
    Mlm,
    Dae,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Mt, Task::Mlm, Task::Dae];

    pub fn name(self) -> &'static str {
        match self {
            Task::Mt => "mt",
            Task::Mlm => "mlm",
            Task::Dae => "dae",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlmLevel {
    Token,
    Word,
}

/// What a selected MLM position is replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Every selected position becomes MASK.
    AlwaysMask,
    /// 80% MASK, 10% a random regular token from `[first_regular, vocab_size)`, 10% unchanged.
    BertSplit { first_regular: TokenId, vocab_size: TokenId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub mask_ratio: f64,
    pub level: MlmLevel,
    pub policy: MaskPolicy,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            mask_ratio: 0.15,
            level: MlmLevel::Token,
            policy: MaskPolicy::AlwaysMask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    /// Fraction of words covered by infilled spans.
    pub infill_ratio: f64,
    pub poisson_lambda: f64,
    pub drop_prob: f64,
    pub blank_prob: f64,
    /// Maximum displacement of the bounded word permutation.
    pub swap_distance: usize,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            infill_ratio: 0.3,
            poisson_lambda: 3.5,
            drop_prob: 0.1,
            blank_prob: 0.1,
            swap_distance: 3,
        }
    }
}

impl DaeConfig {
    /// Configuration that leaves the input untouched.
    pub fn noiseless() -> Self {
        DaeConfig {
            infill_ratio: 0.0,
            drop_prob: 0.0,
            blank_prob: 0.0,
            swap_distance: 0,
            ..DaeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("infill_ratio", self.infill_ratio),
            ("drop_prob", self.drop_prob),
            ("blank_prob", self.blank_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.poisson_lambda > 0.0 && self.poisson_lambda.is_finite()) {
            return Err(format!("poisson_lambda must be positive, got {}", self.poisson_lambda));
        }
        Ok(())
    }
}

impl MlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(format!("mask_ratio must be in [0, 1], got {}", self.mask_ratio));
        }
        Ok(())
    }
}

/// Target-language identifier together with its vocabulary symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLid {
    pub lang: LanguageId,
    pub token: TokenId,
}

impl TargetLid {
    pub fn from_vocab(vocab: &SubwordVocab, lang: &LanguageId) -> Option<Self> {
        vocab.lid(lang).map(|token| TargetLid {
            lang: lang.clone(),
            token,
        })
    }
}

/// One training example for any of the three tasks.
///
/// For MT and DAE, `target_ids` is the bare target sentence (the model adds
/// BOS/EOS) and `loss_mask` is all true. For MLM, `target_ids` has the same
/// length as `input_ids` and `loss_mask` marks the predicted positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisedExample {
    pub input_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub task: Task,
    pub tgt_lid: Option<LanguageId>,
}

impl NoisedExample {
    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// One-line JSON record for debug dumps and golden files.
    pub fn debug_record(&self, vocab: &SubwordVocab) -> String {
        let show = |ids: &[TokenId]| -> Vec<String> {
            ids.iter()
                .map(|&i| vocab.token(i).map(|t| t.display()).unwrap_or_else(|_| format!("<{i}>")))
                .collect()
        };
        let bits: String = self.loss_mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        json!({
            "task": self.task.name(),
            "lid": self.tgt_lid.as_ref().map(|l| l.to_string()),
            "input": show(&self.input_ids),
            "target": show(&self.target_ids),
            "mask": bits,
        })
        .to_string()
    }
}

/// `round_half_up(ratio * n)`, at least 1 when `ratio > 0` and `n >= 1`,
/// never more than `n`.
pub fn unit_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    // The epsilon absorbs representation error in products like 0.35 * 10.
    let c = (ratio * n as f64 + 0.5 + 1e-9).floor() as usize;
    c.clamp(1, n)
}

/// Translation example: source plus target LID in, bare target out.
pub fn make_mt_example(src: &[TokenId], tgt: &[TokenId], lid: &TargetLid) -> NoisedExample {
    let mut input_ids = src.to_vec();
    input_ids.push(lid.token);
    NoisedExample {
        input_ids,
        target_ids: tgt.to_vec(),
        loss_mask: vec![true; tgt.len()],
        task: Task::Mt,
        tgt_lid: Some(lid.lang.clone()),
    }
}

pub fn mask_mlm<R: Rng + ?Sized>(sent: &TokenizedSentence, cfg: &MlmConfig, rng: &mut R) -> NoisedExample {
    let units: Vec<(usize, usize)> = match cfg.level {
        MlmLevel::Token => (0..sent.len()).map(|i| (i, i + 1)).collect(),
        MlmLevel::Word => sent.word_spans.clone(),
    };
    let n_mask = unit_count(cfg.mask_ratio, units.len());
    let mut input_ids = sent.ids.clone();
    let mut loss_mask = vec![false; sent.len()];
    for u in sample(rng, units.len(), n_mask).into_iter() {
        let (s, e) = units[u];
        for pos in s..e {
            loss_mask[pos] = true;
            input_ids[pos] = match cfg.policy {
                MaskPolicy::AlwaysMask => MASK,
                MaskPolicy::BertSplit { first_regular, vocab_size } => {
                    let r: f64 = rng.gen();
                    if r < 0.8 {
                        MASK
                    } else if r < 0.9 && first_regular < vocab_size {
                        rng.gen_range(first_regular..vocab_size)
                    } else {
                        sent.ids[pos]
                    }
                }
            };
        }
    }
    NoisedExample {
        input_ids,
        target_ids: sent.ids.clone(),
        loss_mask,
        task: Task::Mlm,
        tgt_lid: None,
    }
}

/// Raw Poisson(λ) span length, zeros included.
pub fn raw_span_length<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> usize {
    Poisson::new(lambda).expect("poisson_lambda must be positive").sample(rng) as usize
}

/// Poisson(λ) span length with zero draws resampled.
pub fn span_length<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> usize {
    let dist = Poisson::new(lambda).expect("poisson_lambda must be positive");
    loop {
        let l = dist.sample(rng) as usize;
        if l > 0 {
            return l;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infilled {
    pub units: Vec<WordUnit>,
    /// `(start word, length)` of each replaced span, in original word indices.
    pub spans: Vec<(usize, usize)>,
}

impl Infilled {
    pub fn covered(&self) -> usize {
        self.spans.iter().map(|s| s.1).sum()
    }
}

/// Text infilling: spans covering `unit_count(infill_ratio, n)` words are
/// each replaced by a single BLANK unit.
pub fn infill_spans<R: Rng + ?Sized>(words: &[WordUnit], cfg: &DaeConfig, rng: &mut R) -> Infilled {
    let n = words.len();
    let budget = unit_count(cfg.infill_ratio, n);
    let mut covered = vec![false; n];
    let mut spans = Vec::new();
    let mut used = 0;
    while used < budget {
        let mut len = span_length(cfg.poisson_lambda, rng).min(budget - used);
        let starts = loop {
            let starts: Vec<usize> = (0..=n - len)
                .filter(|&s| covered[s..s + len].iter().all(|c| !c))
                .collect();
            if !starts.is_empty() {
                break starts;
            }
            // Free words always remain while used < budget <= n, so len 1 fits.
            len -= 1;
        };
        let start = starts[rng.gen_range(0..starts.len())];
        covered[start..start + len].iter_mut().for_each(|c| *c = true);
        spans.push((start, len));
        used += len;
    }
    spans.sort_unstable();

    let mut units = Vec::with_capacity(n - used + spans.len());
    let mut i = 0;
    let mut next_span = spans.iter().peekable();
    while i < n {
        match next_span.peek() {
            Some(&&(s, l)) if s == i => {
                units.push(vec![BLANK]);
                i += l;
                next_span.next();
            }
            _ => {
                units.push(words[i].clone());
                i += 1;
            }
        }
    }
    Infilled { units, spans }
}

/// Each unit is independently dropped with `drop_prob`, otherwise replaced by
/// BLANK with `blank_prob`.
pub fn drop_and_blank<R: Rng + ?Sized>(units: &[WordUnit], cfg: &DaeConfig, rng: &mut R) -> Vec<WordUnit> {
    let mut out = Vec::with_capacity(units.len());
    for u in units {
        if rng.gen::<f64>() < cfg.drop_prob {
            continue;
        }
        if rng.gen::<f64>() < cfg.blank_prob {
            out.push(vec![BLANK]);
        } else {
            out.push(u.clone());
        }
    }
    out
}

/// Random permutation with `|σ(i) - i| <= k`: each index gets a key
/// `i + U[0, k+1)` and indices are stably sorted by key. Returns, for each
/// output position, the input index placed there.
pub fn bounded_permutation<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k == 0 {
        return (0..n).collect();
    }
    let keys: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * (k as f64 + 1.0)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    order
}

pub fn swap_words<R: Rng + ?Sized>(units: &[WordUnit], k: usize, rng: &mut R) -> Vec<WordUnit> {
    bounded_permutation(units.len(), k, rng)
        .into_iter()
        .map(|i| units[i].clone())
        .collect()
}

/// Applies the full noise model `swap(drop_and_blank(infill(x)))`.
pub fn noise_words<R: Rng + ?Sized>(words: &[WordUnit], cfg: &DaeConfig, rng: &mut R) -> Vec<WordUnit> {
    let infilled = infill_spans(words, cfg, rng);
    let dropped = drop_and_blank(&infilled.units, cfg, rng);
    swap_words(&dropped, cfg.swap_distance, rng)
}

/// DAE example: noised sentence plus LID in, original sentence out.
pub fn make_dae_example<R: Rng + ?Sized>(
    sent: &TokenizedSentence,
    cfg: &DaeConfig,
    lid: &TargetLid,
    rng: &mut R,
) -> NoisedExample {
    let noised = noise_words(&sent.words(), cfg, rng);
    let mut input_ids: Vec<TokenId> = noised.into_iter().flatten().collect();
    input_ids.push(lid.token);
    NoisedExample {
        input_ids,
        target_ids: sent.ids.clone(),
        loss_mask: vec![true; sent.len()],
        task: Task::Dae,
        tgt_lid: Some(lid.lang.clone()),
    }
}
