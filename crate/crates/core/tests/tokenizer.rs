use mnmt::corpus::LanguageId;
use mnmt::tokenizer::{train_vocab, SubwordVocab, UNK};
use proptest::prelude::*;

fn langs() -> Vec<LanguageId> {
    ["en", "xa"].iter().map(|c| LanguageId::new(c).unwrap()).collect()
}

fn corpus() -> Vec<String> {
    [
        "the big dog sat on a mat",
        "bagad kobad dabag gadok",
        "a dog and a cat and the dog",
        "kadab bokag gobak dagok bad",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn vocab() -> SubwordVocab {
    train_vocab(&corpus(), &langs(), 60).unwrap()
}

proptest! {
    #[test]
    fn encode_decode_round_trips(words in prop::collection::vec("[abdgkot]{1,8}", 0..12), gap in "[ \t]{1,3}") {
        let v = vocab();
        let text = words.join(&gap);
        let enc = v.encode(&text);
        prop_assert_eq!(enc.word_count(), words.len());
        prop_assert!(!enc.ids.contains(&UNK));
        prop_assert_eq!(v.word_spans(&enc.ids), enc.word_spans.clone());
        prop_assert_eq!(v.decode(&enc.ids).unwrap(), words.join(" "));
    }

    #[test]
    fn unseen_characters_become_unk(word in "[QZ]{1,4}") {
        let v = vocab();
        let enc = v.encode(&format!("dog {word}"));
        prop_assert_eq!(enc.word_count(), 2);
        prop_assert!(enc.ids[enc.word_spans[1].0..].iter().all(|&i| i == UNK));
    }
}

#[test]
fn vocab_text_round_trip_is_lossless() {
    let v = vocab();
    let back = SubwordVocab::from_text(&v.to_text()).unwrap();
    assert_eq!(back.to_text(), v.to_text());
    for s in corpus() {
        assert_eq!(back.encode(&s), v.encode(&s));
    }
    assert!(v.len() <= 60);
}

#[test]
fn training_is_order_deterministic() {
    let a = vocab();
    let b = vocab();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.lid(&LanguageId::new("xa").unwrap()), b.lid(&LanguageId::new("xa").unwrap()));
}
