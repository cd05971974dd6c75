use mnmt::corpus::LanguageId;
use mnmt::noising::*;
use mnmt::tokenizer::{train_vocab, TokenizedSentence, BLANK, MASK};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence(lens: &[usize]) -> TokenizedSentence {
    let (mut ids, mut word_spans) = (Vec::new(), Vec::new());
    for (w, &l) in lens.iter().enumerate() {
        let s = ids.len();
        ids.extend((0..l).map(|j| 100 + 10 * w as u32 + j as u32));
        word_spans.push((s, ids.len()));
    }
    TokenizedSentence { ids, word_spans }
}

fn lid() -> TargetLid {
    TargetLid { lang: LanguageId::new("xa").unwrap(), token: 7 }
}

proptest! {
    #[test]
    fn word_masking_covers_whole_words(lens in prop::collection::vec(1usize..4, 1..30), ratio in 0.0f64..=1.0, seed: u64) {
        let s = sentence(&lens);
        let cfg = MlmConfig { mask_ratio: ratio, level: MlmLevel::Word, policy: MaskPolicy::AlwaysMask };
        let ex = mask_mlm(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut whole = 0;
        for &(a, b) in &s.word_spans {
            let m = &ex.loss_mask[a..b];
            prop_assert!(m.iter().all(|&x| x) || m.iter().all(|&x| !x));
            whole += m[0] as usize;
        }
        prop_assert_eq!(whole, unit_count(ratio, s.word_count()));
        prop_assert_eq!(&ex.target_ids, &s.ids);
    }

    #[test]
    fn bert_split_only_touches_selected_positions(lens in prop::collection::vec(1usize..4, 1..30), ratio in 0.0f64..=1.0, seed: u64) {
        let s = sentence(&lens);
        let policy = MaskPolicy::BertSplit { first_regular: 10, vocab_size: 50 };
        let cfg = MlmConfig { mask_ratio: ratio, level: MlmLevel::Token, policy };
        let ex = mask_mlm(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ex.masked_count(), unit_count(ratio, s.len()));
        for i in 0..s.len() {
            if !ex.loss_mask[i] {
                prop_assert_eq!(ex.input_ids[i], s.ids[i]);
            } else {
                let x = ex.input_ids[i];
                prop_assert!(x == MASK || x == s.ids[i] || (10..50).contains(&x));
            }
        }
    }

    #[test]
    fn infilling_preserves_order_of_kept_words(lens in prop::collection::vec(1usize..3, 1..40), ratio in 0.0f64..=1.0, seed: u64) {
        let words = sentence(&lens).words();
        let cfg = DaeConfig { infill_ratio: ratio, ..DaeConfig::default() };
        let inf = infill_spans(&words, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(inf.covered(), unit_count(ratio, words.len()));
        let kept: Vec<_> = inf.units.iter().filter(|u| u.as_slice() != [BLANK]).cloned().collect();
        let mut rest = words.iter();
        for k in &kept {
            prop_assert!(rest.any(|w| w == k));
        }
        prop_assert_eq!(kept.len(), words.len() - inf.covered());
    }

    #[test]
    fn bounded_permutation_is_a_local_permutation(n in 0usize..60, k in 0usize..8, seed: u64) {
        let p = bounded_permutation(n, k, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(p.iter().enumerate().all(|(i, &j)| i.abs_diff(j) <= k));
    }

    #[test]
    fn dae_examples_end_with_the_lid(lens in prop::collection::vec(1usize..3, 1..20), seed: u64) {
        let s = sentence(&lens);
        let ex = make_dae_example(&s, &DaeConfig::default(), &lid(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ex.input_ids.last(), Some(&7));
        prop_assert_eq!(&ex.target_ids, &s.ids);
        prop_assert!(ex.loss_mask.iter().all(|&m| m));
    }
}

#[test]
fn noiseless_dae_is_identity() {
    let s = sentence(&[2, 1, 3, 1]);
    let ex = make_dae_example(&s, &DaeConfig::noiseless(), &lid(), &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(&ex.input_ids[..s.len()], s.ids.as_slice());
}

#[test]
fn zero_ratio_masks_nothing() {
    let s = sentence(&[1, 2, 3]);
    let cfg = MlmConfig { mask_ratio: 0.0, ..MlmConfig::default() };
    assert_eq!(mask_mlm(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).masked_count(), 0);
}

fn dump() -> String {
    let langs = [LanguageId::new("en").unwrap(), LanguageId::new("xa").unwrap()];
    let text = ["the dog sat on the big mat", "bagad kobad dabag gadok kadab bokag"];
    let vocab = train_vocab(&text, &langs, 50).unwrap();
    let lid = TargetLid::from_vocab(&vocab, &langs[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = String::new();
    for t in text {
        let s = vocab.encode(t);
        for level in [MlmLevel::Token, MlmLevel::Word] {
            let cfg = MlmConfig { mask_ratio: 0.3, level, policy: MaskPolicy::AlwaysMask };
            out += &mask_mlm(&s, &cfg, &mut rng).debug_record(&vocab);
            out.push('\n');
        }
        out += &make_dae_example(&s, &DaeConfig::default(), &lid, &mut rng).debug_record(&vocab);
        out.push('\n');
    }
    out
}

#[test]
fn noised_dump_matches_golden() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/noised.jsonl");
    let got = dump();
    if std::env::var_os("MNMT_BLESS").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(&path).unwrap());
}
