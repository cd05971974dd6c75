mod common;

use common::tiny_config;
use mnmt::eval::*;
use mnmt::model::Model;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    hyps: Vec<String>,
    refs: Vec<String>,
    score: f64,
    precisions: Vec<f64>,
    bp: f64,
    sys_len: usize,
    ref_len: usize,
    counts: Vec<usize>,
    totals: Vec<usize>,
}

fn fixtures() -> Vec<Fixture> {
    serde_json::from_str(include_str!("golden/bleu.json")).unwrap()
}

#[test]
fn bleu_matches_golden_fixtures() {
    for f in fixtures() {
        let r = bleu(&f.hyps, &f.refs).unwrap();
        assert!((r.score - f.score).abs() < 1e-9, "{:?}: {} vs {}", f.hyps, r.score, f.score);
        assert_eq!(r.counts.to_vec(), f.counts);
        assert_eq!(r.totals.to_vec(), f.totals);
        assert_eq!((r.sys_len, r.ref_len), (f.sys_len, f.ref_len));
        assert!((r.brevity_penalty - f.bp).abs() < 1e-12);
        for (a, b) in r.precisions.iter().zip(&f.precisions) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn bleu_summary_line() {
    let r = bleu(&["the cat on the mat"], &["the cat sat on the mat"]).unwrap();
    assert_eq!(
        r.summary(),
        "BLEU = 40.94 100.0/75.0/33.3/25.0 (BP = 0.819 ratio = 0.833 hyp_len = 5 ref_len = 6)"
    );
}

#[test]
fn bleu_is_case_sensitive() {
    assert!(bleu(&["The Cat"], &["the cat"]).unwrap().score < 100.0);
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g", ",", "."]), 1..12)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn bleu_of_identical_text_is_100(h in prop::collection::vec(sentence(), 1..6)) {
        prop_assert_eq!(bleu(&h, &h).unwrap().score, 100.0);
    }

    #[test]
    fn bleu_ignores_sentence_order(
        pairs in prop::collection::vec((sentence(), sentence()), 1..8),
        seed in any::<u64>(),
    ) {
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (h1, r1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (h2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = bleu(&h1, &r1).unwrap();
        let b = bleu(&h2, &r2).unwrap();
        prop_assert!((a.score - b.score).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a.score));
    }
}

/// Plain argmax loop over the next-token distribution.
fn reference_greedy(model: &Model<f64>, src: &[u32], max_len: usize) -> (Vec<u32>, f64) {
    let enc = model.encode_source(src).unwrap();
    let mut prefix = vec![1u32];
    let mut logprob = 0.0;
    for step in 0..max_len {
        let row = &model.next_token_logprobs(&enc, &[prefix.clone()])[0];
        let tok = if step + 1 == max_len {
            2
        } else {
            let mut best = 2;
            for t in 2..row.len() {
                if row[t] > row[best] {
                    best = t;
                }
            }
            best
        };
        logprob += row[tok];
        if tok == 2 {
            break;
        }
        prefix.push(tok as u32);
    }
    (prefix[1..].to_vec(), logprob)
}

fn random_sources(n: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..6);
            let mut s: Vec<u32> = (0..len).map(|_| rng.gen_range(8..11)).collect();
            s.push(6);
            s
        })
        .collect()
}

#[test]
fn beam_of_one_is_greedy() {
    let model = Model::<f64>::new(tiny_config(), 21).unwrap();
    let cfg = DecodeConfig { beam_size: 1, max_len_a: 1.0, max_len_b: 3, ..Default::default() };
    for src in random_sources(100) {
        let h = beam_decode(&model, &src, &cfg).unwrap();
        let (ids, lp) = reference_greedy(&model, &src, cfg.max_len(src.len()));
        assert_eq!(h.ids, ids);
        assert!((h.logprob - lp).abs() < 1e-12);
        assert!((h.score - lp / (ids.len() + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn wider_beam_never_scores_below_greedy() {
    let model = Model::<f64>::new(tiny_config(), 22).unwrap();
    for alpha in [0.0, 1.0] {
        let cfg = DecodeConfig { alpha, max_len_a: 1.0, max_len_b: 3, ..Default::default() };
        for src in random_sources(50) {
            let g = greedy_decode(&model, &src, &cfg).unwrap();
            let b = beam_decode(&model, &src, &cfg).unwrap();
            assert!(b.score >= g.score - 1e-12, "alpha {alpha}: {} < {}", b.score, g.score);
        }
    }
}

#[test]
fn zero_alpha_ranks_by_log_probability() {
    let model = Model::<f64>::new(tiny_config(), 23).unwrap();
    let cfg = DecodeConfig { alpha: 0.0, beam_size: 3, ..Default::default() };
    let h = beam_decode(&model, &[8, 9, 6], &cfg).unwrap();
    assert_eq!(h.score, h.logprob);
}

#[test]
fn forced_eos_at_length_limit() {
    let model = Model::<f64>::new(tiny_config(), 24).unwrap();
    let cfg = DecodeConfig { beam_size: 2, max_len_a: 0.0, max_len_b: 2, ..Default::default() };
    let h = beam_decode(&model, &[8, 9, 6], &cfg).unwrap();
    assert!(h.ids.len() <= 1);
}
