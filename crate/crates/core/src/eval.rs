//! Beam search, corpus BLEU and target-language compliance.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, Scalar};
use crate::tokenizer::{TokenId, BOS, EOS, PAD};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid decode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{hyps} hypotheses but {refs} references")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("empty reference set")]
    NoReferences,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthPenalty {
    /// `score = logprob / len^alpha`
    Simple,
    /// `score = logprob / ((5 + len) / 6)^alpha`
    Gnmt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub alpha: f64,
    pub penalty: LengthPenalty,
    /// Output length limit is `max_len_a * source_len + max_len_b` tokens,
    /// EOS included.
    pub max_len_a: f64,
    pub max_len_b: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_size: 5, alpha: 1.0, penalty: LengthPenalty::Simple, max_len_a: 1.5, max_len_b: 10 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        DecodeConfig { beam_size: 1, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.beam_size == 0 {
            return Err(EvalError::Config("beam_size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(EvalError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.max_len_a >= 0.0) || (self.max_len_a == 0.0 && self.max_len_b == 0) {
            return Err(EvalError::Config("maximum output length must be positive".into()));
        }
        Ok(())
    }

    pub fn max_len(&self, src_len: usize) -> usize {
        ((self.max_len_a * src_len as f64).floor() as usize + self.max_len_b).max(1)
    }
}

/// Length normalizer for a hypothesis of `len` tokens (EOS included).
pub fn length_penalty(len: usize, alpha: f64, kind: LengthPenalty) -> f64 {
    match kind {
        LengthPenalty::Simple => (len as f64).powf(alpha),
        LengthPenalty::Gnmt => ((5.0 + len as f64) / 6.0).powf(alpha),
    }
}

/// A finished hypothesis. `ids` excludes BOS and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<TokenId>,
    /// Sum of token log-probabilities, EOS included.
    pub logprob: f64,
    /// `logprob` divided by the length penalty.
    pub score: f64,
}

fn allowed(tok: usize) -> bool {
    tok != PAD as usize && tok != BOS as usize
}

/// Beam search over the translation path. Hypotheses that reach the length
/// limit are closed with a forced EOS.
pub fn beam_decode<T: Scalar>(model: &Model<T>, src: &[TokenId], cfg: &DecodeConfig) -> Result<Hypothesis, EvalError> {
    cfg.validate()?;
    let enc = model.encode_source(src)?;
    let max_len = cfg.max_len(src.len());
    let k = cfg.beam_size;
    let mut beams: Vec<(Vec<TokenId>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let prefixes: Vec<Vec<TokenId>> = beams.iter().map(|b| b.0.clone()).collect();
        let rows = model.next_token_logprobs(&enc, &prefixes);
        let last = step + 1 == max_len;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, row) in rows.iter().enumerate() {
            if last {
                cands.push((beams[bi].1 + row[EOS as usize], bi, EOS as usize));
                continue;
            }
            for (tok, &lp) in row.iter().enumerate() {
                if allowed(tok) {
                    cands.push((beams[bi].1 + lp, bi, tok));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(k);
        for (rank, (lp, bi, tok)) in cands.into_iter().take(2 * k).enumerate() {
            if tok == EOS as usize {
                if rank < k && finished.len() < k {
                    let ids = beams[bi].0[1..].to_vec();
                    let len = ids.len() + 1;
                    finished.push(Hypothesis { ids, logprob: lp, score: lp / length_penalty(len, cfg.alpha, cfg.penalty) });
                }
            } else if next.len() < k {
                let mut p = beams[bi].0.clone();
                p.push(tok as TokenId);
                next.push((p, lp));
            }
            if next.len() == k && finished.len() >= k {
                break;
            }
        }
        if finished.len() >= k || next.is_empty() {
            break;
        }
        beams = next;
    }
    Ok(finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .expect("the last step always closes a hypothesis"))
}

/// Argmax decoding; ties go to the smaller token id.
pub fn greedy_decode<T: Scalar>(model: &Model<T>, src: &[TokenId], cfg: &DecodeConfig) -> Result<Hypothesis, EvalError> {
    beam_decode(model, src, &DecodeConfig { beam_size: 1, ..*cfg })
}

static TOK_RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();

/// The "13a" tokenizer of the standard corpus BLEU scorer.
pub fn tokenize_13a(line: &str) -> String {
    let rules = TOK_RULES.get_or_init(|| {
        [
            (Regex::new(r"([\{-\~\[-\x60 -\&\(-\+:-@/])").unwrap(), " $1 "),
            (Regex::new(r"([^0-9])([\.,])").unwrap(), "$1 $2 "),
            (Regex::new(r"([\.,])([^0-9])").unwrap(), " $1 $2"),
            (Regex::new(r"([0-9])(-)").unwrap(), "$1 $2 "),
        ]
    });
    let mut s = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if s.contains('&') {
        s = s.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in rules.iter() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: [f64; ORDER],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    pub counts: [usize; ORDER],
    pub totals: [usize; ORDER],
}

impl BleuReport {
    /// Recomputes the score from the stored counts. The geometric mean runs
    /// over the orders with at least one hypothesis n-gram.
    pub fn from_counts(counts: [usize; ORDER], totals: [usize; ORDER], sys_len: usize, ref_len: usize) -> Self {
        let mut precisions = [0.0; ORDER];
        let mut smooth = 1.0;
        let mut order = 0;
        for n in 0..ORDER {
            if totals[n] == 0 {
                break;
            }
            order = n + 1;
            precisions[n] = if counts[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * totals[n] as f64)
            } else {
                100.0 * counts[n] as f64 / totals[n] as f64
            };
        }
        let brevity_penalty = if sys_len >= ref_len {
            1.0
        } else if sys_len > 0 {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        } else {
            0.0
        };
        let score = if order == 0 {
            0.0
        } else {
            let log_mean = precisions[..order].iter().map(|&p| p.ln()).sum::<f64>() / order as f64;
            (brevity_penalty * log_mean.exp()).min(100.0)
        };
        BleuReport {
            score,
            precisions,
            brevity_penalty,
            sys_len,
            ref_len,
            counts,
            totals,
        }
    }

    /// `BLEU = 40.94 100.0/75.0/33.3/25.0 (BP = 0.819 ratio = 0.833 hyp_len = 5 ref_len = 6)`
    pub fn summary(&self) -> String {
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{p:.1}")).collect();
        let ratio = if self.ref_len == 0 { 0.0 } else { self.sys_len as f64 / self.ref_len as f64 };
        format!(
            "BLEU = {:.2} {} (BP = {:.3} ratio = {:.3} hyp_len = {} ref_len = {})",
            self.score,
            p.join("/"),
            self.brevity_penalty,
            ratio,
            self.sys_len,
            self.ref_len
        )
    }
}

fn ngrams(words: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w.iter().map(|s| s.to_string()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Case-sensitive corpus BLEU over detokenized text with one reference per
/// hypothesis.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuReport, EvalError> {
    if refs.is_empty() {
        return Err(EvalError::NoReferences);
    }
    if hyps.len() != refs.len() {
        return Err(EvalError::CountMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    let mut counts = [0; ORDER];
    let mut totals = [0; ORDER];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h = tokenize_13a(h.as_ref().trim_end());
        let r = tokenize_13a(r.as_ref().trim_end());
        let hw: Vec<&str> = h.split_whitespace().collect();
        let rw: Vec<&str> = r.split_whitespace().collect();
        sys_len += hw.len();
        ref_len += rw.len();
        for n in 1..=ORDER {
            let hc = ngrams(&hw, n);
            let rc = ngrams(&rw, n);
            totals[n - 1] += hw.len().saturating_sub(n - 1);
            counts[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    Ok(BleuReport::from_counts(counts, totals, sys_len, ref_len))
}

/// Fraction of emitted words that belong to the target language's lexicon;
/// 0 when nothing was emitted.
pub fn lid_compliance<S: AsRef<str>>(hyps: &[S], target_lexicon: &HashSet<String>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for h in hyps {
        for w in h.as_ref().split_whitespace() {
            total += 1;
            if target_lexicon.contains(w) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
