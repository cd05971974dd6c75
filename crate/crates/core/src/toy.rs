//! Synthetic languages for end-to-end runs.
//!
//! Every language renders the same meaning space (subject, verb, object,
//! optional adjectives and a prepositional phrase) with its own word order
//! and a surface lexicon built from a private consonant set, so lexicons are
//! disjoint at the character level.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BitextCorpus, LangPair, LanguageId, MonoCorpus, MonoSide};
use crate::seeding::component_rng;

const ANIMATE: usize = 10;
const THINGS: usize = 10;
const VERBS: usize = 10;
const ADJS: usize = 8;
const PREPS: usize = 4;
const NOUNS: usize = ANIMATE + THINGS;
const CONCEPTS: usize = NOUNS + VERBS + ADJS + PREPS;

const CONSONANTS: [&str; 5] = ["bdgk", "lmnr", "fsvz", "pthw", "cjqxy"];
const VOWELS: &str = "aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordOrder {
    Svo,
    Sov,
    Vso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguage {
    pub code: LanguageId,
    pub order: WordOrder,
    pub adjective_after_noun: bool,
    words: Vec<String>,
}

impl ToyLanguage {
    pub fn lexicon(&self) -> HashSet<String> {
        self.words.iter().cloned().collect()
    }
}

/// One sentence meaning; nouns and adjectives are concept indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Meaning {
    subject: (usize, Option<usize>),
    verb: usize,
    object: (usize, Option<usize>),
    place: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub languages: Vec<ToyLanguage>,
    /// Verbs taking animate objects.
    social_verbs: usize,
}

fn surface_words(consonants: &str, rng: &mut impl Rng) -> Vec<String> {
    let cs: Vec<char> = consonants.chars().collect();
    let vs: Vec<char> = VOWELS.chars().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(CONCEPTS);
    while out.len() < CONCEPTS {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .flat_map(|_| [*cs.choose(rng).unwrap(), *vs.choose(rng).unwrap()])
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl ToyWorld {
    /// The first language uses SVO with adjective-noun order; the others
    /// cycle through SOV and VSO with postposed adjectives on alternate
    /// languages. At most five languages.
    pub fn new(codes: &[LanguageId], seed: u64) -> Self {
        assert!(codes.len() <= CONSONANTS.len(), "at most {} toy languages", CONSONANTS.len());
        let orders = [WordOrder::Svo, WordOrder::Sov, WordOrder::Vso];
        let languages = codes
            .iter()
            .enumerate()
            .map(|(i, code)| {
                let mut rng = component_rng(seed, "toy-lexicon", i as u64);
                ToyLanguage {
                    code: code.clone(),
                    order: orders[i % 3],
                    adjective_after_noun: i % 2 == 1,
                    words: surface_words(CONSONANTS[i], &mut rng),
                }
            })
            .collect();
        ToyWorld { languages, social_verbs: VERBS / 2 }
    }

    pub fn language(&self, code: &LanguageId) -> &ToyLanguage {
        self.languages.iter().find(|l| &l.code == code).expect("language in toy world")
    }

    pub fn sample_meaning(&self, rng: &mut impl Rng) -> Meaning {
        let adj = |rng: &mut dyn rand::RngCore| {
            if rng.gen_bool(0.4) {
                Some(rng.gen_range(0..ADJS))
            } else {
                None
            }
        };
        let verb = rng.gen_range(0..VERBS);
        let subject = (rng.gen_range(0..ANIMATE), adj(rng));
        let object = if verb < self.social_verbs {
            (rng.gen_range(0..ANIMATE), adj(rng))
        } else {
            (ANIMATE + rng.gen_range(0..THINGS), adj(rng))
        };
        let place = rng
            .gen_bool(0.3)
            .then(|| (rng.gen_range(0..PREPS), ANIMATE + rng.gen_range(0..THINGS)));
        Meaning { subject, verb, object, place }
    }

    pub fn render(&self, code: &LanguageId, m: &Meaning) -> String {
        let l = self.language(code);
        let w = |c: usize| l.words[c].as_str();
        let np = |(n, a): (usize, Option<usize>)| -> Vec<&str> {
            match a {
                None => vec![w(n)],
                Some(a) if l.adjective_after_noun => vec![w(n), w(NOUNS + VERBS + a)],
                Some(a) => vec![w(NOUNS + VERBS + a), w(n)],
            }
        };
        let s = np(m.subject);
        let o = np(m.object);
        let v = vec![w(NOUNS + m.verb)];
        let mut out: Vec<&str> = match l.order {
            WordOrder::Svo => [s, v, o].concat(),
            WordOrder::Sov => [s, o, v].concat(),
            WordOrder::Vso => [v, s, o].concat(),
        };
        if let Some((p, n)) = m.place {
            let prep = w(NOUNS + VERBS + ADJS + p);
            if l.order == WordOrder::Sov {
                out.extend([w(n), prep]);
            } else {
                out.extend([prep, w(n)]);
            }
        }
        out.join(" ")
    }

    fn meanings(&self, n: usize, seed: u64, stream: &str, index: u64) -> Vec<Meaning> {
        let mut rng = component_rng(seed, stream, index);
        (0..n).map(|_| self.sample_meaning(&mut rng)).collect()
    }

    /// `n` parallel sentences for a pair; `stream` and `index` select an
    /// independent meaning sample.
    pub fn bitext(&self, pair: &LangPair, n: usize, seed: u64, stream: &str, index: u64) -> BitextCorpus {
        let pairs = self
            .meanings(n, seed, stream, index)
            .iter()
            .map(|m| (self.render(&pair.src, m), self.render(&pair.tgt, m)))
            .collect();
        BitextCorpus::new(pair.clone(), pairs)
    }

    pub fn mono(&self, code: &LanguageId, side: MonoSide, n: usize, seed: u64, index: u64) -> MonoCorpus {
        let sentences = self
            .meanings(n, seed, "toy-mono", index)
            .iter()
            .map(|m| self.render(code, m))
            .collect();
        MonoCorpus { lang: code.clone(), side, sentences }
    }
}
