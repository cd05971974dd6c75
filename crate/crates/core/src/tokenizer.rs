//! Shared byte-pair-encoding subword vocabulary.
//!
//! Words are split on whitespace. The first subword of a word is stored as
//! is; every following subword carries a continuation marker (`##` in the
//! display form), so word boundaries can be recovered from ids alone.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{normalize_whitespace, LanguageId};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;
pub const BLANK: TokenId = 4;
pub const UNK: TokenId = 5;

const FIXED_SPECIALS: [&str; 6] = ["[PAD]", "[BOS]", "[EOS]", "[MASK]", "[BLANK]", "[UNK]"];
const CONTINUATION: &str = "##";
const FILE_HEADER: &str = "#mnmt-vocab v1";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary size {requested} cannot hold {required} specials and base characters")]
    SizeTooSmall { requested: usize, required: usize },
    #[error("token id {0} out of range")]
    OutOfRange(TokenId),
    #[error("cannot access vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary file at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Special(&'static str),
    Lid(LanguageId),
    /// First subword of a word.
    Initial(String),
    /// Non-initial subword of a word.
    Continuation(String),
}

impl Token {
    pub fn display(&self) -> String {
        match self {
            Token::Special(s) => s.to_string(),
            Token::Lid(l) => lid_symbol(l),
            Token::Initial(t) => t.clone(),
            Token::Continuation(t) => format!("{CONTINUATION}{t}"),
        }
    }

    fn piece(&self) -> Option<(&str, bool)> {
        match self {
            Token::Initial(t) => Some((t, false)),
            Token::Continuation(t) => Some((t, true)),
            _ => None,
        }
    }
}

fn lid_symbol(lang: &LanguageId) -> String {
    format!("[LID_{lang}]")
}

/// Token ids of one sentence plus the span of each whitespace word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub ids: Vec<TokenId>,
    pub word_spans: Vec<(usize, usize)>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_spans.len()
    }

    /// The sentence as a list of word units.
    pub fn words(&self) -> Vec<Vec<TokenId>> {
        self.word_spans
            .iter()
            .map(|&(s, e)| self.ids[s..e].to_vec())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SubwordVocab {
    tokens: Vec<Token>,
    pieces: HashMap<(String, bool), TokenId>,
    languages: Vec<LanguageId>,
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.languages == other.languages
    }
}

impl SubwordVocab {
    fn with_specials(languages: &[LanguageId]) -> Self {
        let mut langs: Vec<LanguageId> = languages.to_vec();
        langs.sort();
        langs.dedup();
        let mut tokens: Vec<Token> = FIXED_SPECIALS.iter().map(|s| Token::Special(s)).collect();
        tokens.extend(langs.iter().cloned().map(Token::Lid));
        SubwordVocab {
            tokens,
            pieces: HashMap::new(),
            languages: langs,
            merges: Vec::new(),
            merge_rank: HashMap::new(),
        }
    }

    fn push_piece(&mut self, text: String, cont: bool) -> TokenId {
        if let Some(&id) = self.pieces.get(&(text.clone(), cont)) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.pieces.insert((text.clone(), cont), id);
        self.tokens.push(if cont {
            Token::Continuation(text)
        } else {
            Token::Initial(text)
        });
        id
    }

    fn add_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let (lt, lc) = self.tokens[left as usize].piece().expect("merge of special");
        let (rt, _) = self.tokens[right as usize].piece().expect("merge of special");
        let merged = format!("{lt}{rt}");
        let id = self.push_piece(merged, lc);
        self.merge_rank.insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of reserved ids (fixed specials plus one LID per language).
    pub fn num_specials(&self) -> usize {
        FIXED_SPECIALS.len() + self.languages.len()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.num_specials()
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    pub fn lid(&self, lang: &LanguageId) -> Option<TokenId> {
        self.languages
            .binary_search(lang)
            .ok()
            .map(|i| (FIXED_SPECIALS.len() + i) as TokenId)
    }

    pub fn lid_language(&self, id: TokenId) -> Option<&LanguageId> {
        match self.tokens.get(id as usize) {
            Some(Token::Lid(l)) => Some(l),
            _ => None,
        }
    }

    pub fn token(&self, id: TokenId) -> Result<&Token, VocabError> {
        self.tokens.get(id as usize).ok_or(VocabError::OutOfRange(id))
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn is_continuation(&self, id: TokenId) -> bool {
        matches!(self.tokens.get(id as usize), Some(Token::Continuation(_)))
    }

    fn char_id(&self, c: char, cont: bool) -> TokenId {
        let mut buf = [0u8; 4];
        let s: &str = c.encode_utf8(&mut buf);
        self.pieces
            .get(&(s.to_string(), cont))
            .copied()
            .unwrap_or(UNK)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<TokenId>) {
        let mut syms: Vec<TokenId> = word
            .chars()
            .enumerate()
            .map(|(i, c)| self.char_id(c, i > 0))
            .collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_rank.get(&(w[0], w[1])).map(|&(r, id)| (r, i, id)))
                .min();
            let Some((_, pos, id)) = best else { break };
            syms[pos] = id;
            syms.remove(pos + 1);
        }
        out.extend(syms);
    }

    /// Encodes a sentence. Characters outside the trained set map to UNK.
    pub fn encode(&self, sentence: &str) -> TokenizedSentence {
        let mut ids = Vec::new();
        let mut word_spans = Vec::new();
        for word in sentence.split_whitespace() {
            let start = ids.len();
            self.encode_word(word, &mut ids);
            word_spans.push((start, ids.len()));
        }
        TokenizedSentence { ids, word_spans }
    }

    /// Decodes ids to text. PAD, BOS, EOS and LID symbols are dropped;
    /// MASK, BLANK and UNK are rendered as standalone words.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            match self.token(id)? {
                Token::Lid(_) => {}
                Token::Special(s) => {
                    if matches!(id, PAD | BOS | EOS) {
                        continue;
                    }
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(s);
                }
                Token::Initial(t) => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(t);
                }
                Token::Continuation(t) => out.push_str(t),
            }
        }
        Ok(out)
    }

    /// Recovers word spans from ids alone: every non-continuation token
    /// opens a new span.
    pub fn word_spans(&self, ids: &[TokenId]) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            match spans.last_mut() {
                Some(last) if self.is_continuation(id) => last.1 = i + 1,
                _ => spans.push((i, i + 1)),
            }
        }
        spans
    }

    /// Serializes to the line-oriented text format: a header, one token per
    /// line (line order = id), then the merge list in rank order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FILE_HEADER}").unwrap();
        writeln!(s, "#tokens {}", self.tokens.len()).unwrap();
        for t in &self.tokens {
            match t {
                Token::Special(name) => writeln!(s, "special\t{name}"),
                Token::Lid(l) => writeln!(s, "lid\t{l}"),
                Token::Initial(p) => writeln!(s, "word\t{p}"),
                Token::Continuation(p) => writeln!(s, "cont\t{p}"),
            }
            .unwrap();
        }
        writeln!(s, "#merges {}", self.merges.len()).unwrap();
        for (a, b) in &self.merges {
            writeln!(s, "{a} {b}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let err = |line: usize, message: &str| VocabError::Parse {
            line: line + 1,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&FILE_HEADER) {
            return Err(err(0, "missing version header"));
        }
        let count = |line: usize, prefix: &str| -> Result<usize, VocabError> {
            lines
                .get(line)
                .and_then(|l| l.strip_prefix(prefix))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| err(line, &format!("expected `{prefix}<count>`")))
        };
        let n_tokens = count(1, "#tokens ")?;
        let mut tokens = Vec::with_capacity(n_tokens);
        for i in 0..n_tokens {
            let ln = 2 + i;
            let line = lines.get(ln).ok_or_else(|| err(ln, "truncated token list"))?;
            let (kind, body) = line.split_once('\t').ok_or_else(|| err(ln, "expected kind<TAB>text"))?;
            let tok = match kind {
                "special" => {
                    let name = FIXED_SPECIALS
                        .iter()
                        .find(|s| **s == body)
                        .ok_or_else(|| err(ln, "unknown special"))?;
                    Token::Special(name)
                }
                "lid" => Token::Lid(LanguageId::new(body).map_err(|e| err(ln, &e.to_string()))?),
                "word" => Token::Initial(body.to_string()),
                "cont" => Token::Continuation(body.to_string()),
                _ => return Err(err(ln, "unknown token kind")),
            };
            tokens.push(tok);
        }
        let languages: Vec<LanguageId> = tokens
            .iter()
            .filter_map(|t| match t {
                Token::Lid(l) => Some(l.clone()),
                _ => None,
            })
            .collect();
        let mut vocab = SubwordVocab::with_specials(&languages);
        if tokens[..vocab.tokens.len().min(tokens.len())] != vocab.tokens[..] {
            return Err(err(2, "special tokens out of canonical order"));
        }
        for t in &tokens[vocab.tokens.len()..] {
            let (p, c) = t.piece().ok_or_else(|| err(2, "special token after pieces"))?;
            let before = vocab.tokens.len();
            vocab.push_piece(p.to_string(), c);
            if vocab.tokens.len() == before {
                return Err(err(2, "duplicate token"));
            }
        }
        let merge_line = 2 + n_tokens;
        let n_merges = count(merge_line, "#merges ")?;
        for i in 0..n_merges {
            let ln = merge_line + 1 + i;
            let line = lines.get(ln).ok_or_else(|| err(ln, "truncated merge list"))?;
            let mut parts = line.split(' ').map(|x| x.parse::<TokenId>());
            let (Some(Ok(a)), Some(Ok(b)), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(ln, "expected two token ids"));
            };
            let valid = |id: TokenId| (id as usize) < vocab.tokens.len() && !vocab.is_special(id);
            if !valid(a) || !valid(b) {
                return Err(err(ln, "merge references an invalid token"));
            }
            vocab.add_merge(a, b);
        }
        if vocab.tokens.len() != n_tokens {
            return Err(err(merge_line, "merges do not reproduce the token list"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        fs::write(path, self.to_text()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Trains a BPE vocabulary of at most `size` tokens over the given
/// sentences. Ties between equally frequent pairs go to the pair whose
/// symbols were created first, so the result depends only on input order.
pub fn train_vocab<S: AsRef<str>>(
    corpora: &[S],
    languages: &[LanguageId],
    size: usize,
) -> Result<SubwordVocab, VocabError> {
    let mut vocab = SubwordVocab::with_specials(languages);

    let mut word_index: HashMap<String, usize> = HashMap::new();
    let mut word_counts: Vec<(String, i64)> = Vec::new();
    for sentence in corpora {
        for w in normalize_whitespace(sentence.as_ref()).split(' ').filter(|w| !w.is_empty()) {
            let idx = *word_index.entry(w.to_string()).or_insert_with(|| {
                word_counts.push((w.to_string(), 0));
                word_counts.len() - 1
            });
            word_counts[idx].1 += 1;
        }
    }

    let base: BTreeSet<(bool, char)> = word_counts
        .iter()
        .flat_map(|(w, _)| w.chars().enumerate().map(|(i, c)| (i > 0, c)))
        .collect();
    let required = vocab.tokens.len() + base.len();
    if size < required {
        return Err(VocabError::SizeTooSmall { requested: size, required });
    }
    for (cont, c) in base {
        vocab.push_piece(c.to_string(), cont);
    }

    let forbidden: HashSet<String> = (0..vocab.num_specials())
        .map(|i| vocab.tokens[i].display())
        .collect();

    let mut words: Vec<(Vec<TokenId>, i64)> = word_counts
        .iter()
        .map(|(w, n)| {
            let syms = w.chars().enumerate().map(|(i, c)| vocab.char_id(c, i > 0)).collect();
            (syms, *n)
        })
        .collect();

    type Pair = (TokenId, TokenId);
    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut holders: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, n)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += n;
            holders.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<Pair>)> =
        counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();
    let mut banned: HashSet<Pair> = HashSet::new();

    while vocab.tokens.len() < size {
        let Some((c, Reverse(pair))) = heap.pop() else { break };
        if counts.get(&pair).copied().unwrap_or(0) != c || banned.contains(&pair) {
            continue;
        }
        if c < 2 {
            break;
        }
        let (lt, lc) = vocab.tokens[pair.0 as usize].piece().unwrap();
        let (rt, _) = vocab.tokens[pair.1 as usize].piece().unwrap();
        let merged = format!("{lt}{rt}");
        if !lc && forbidden.contains(&merged) {
            banned.insert(pair);
            continue;
        }
        let new_id = vocab.add_merge(pair.0, pair.1);

        let affected: Vec<usize> = holders.remove(&pair).into_iter().flatten().collect();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let (syms, n) = &mut words[wi];
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                *counts.get_mut(&key).unwrap() -= *n;
                touched.insert(key);
            }
            let mut merged_syms = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    merged_syms.push(new_id);
                    i += 2;
                } else {
                    merged_syms.push(syms[i]);
                    i += 1;
                }
            }
            *syms = merged_syms;
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                *counts.entry(key).or_default() += *n;
                holders.entry(key).or_default().insert(wi);
                touched.insert(key);
            }
        }
        for key in touched {
            let c = counts[&key];
            if c > 0 {
                heap.push((c, Reverse(key)));
            }
        }
        counts.retain(|_, c| *c > 0);
    }
    Ok(vocab)
}
