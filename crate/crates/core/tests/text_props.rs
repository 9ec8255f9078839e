//! Corpus and tokenizer properties over random inputs.

use std::path::Path;

use astrolm::corpus::{corpus_stats, validate, Citation, Section};
use astrolm::tokenizer::{
    train_wordpiece, train_wordpiece_from_texts, TrainOptions, SPECIAL_TOKENS,
};
use astrolm::{Corpus, Document, Vocabulary};
use proptest::prelude::*;

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-zé]{1,6}|[0-9]{1,3}|[.,;()]|ω", 0..12).prop_map(|w| w.join(" "))
}

fn document(id: usize, n_docs: usize) -> impl Strategy<Value = Document> {
    (
        "[A-Za-z ]{0,20}",
        "[a-z ]{0,30}",
        prop::collection::vec((paragraph(), any::<bool>()), 0..4),
        prop::collection::vec(
            (
                0..n_docs + 2,
                any::<prop::sample::Index>(),
                any::<prop::sample::Index>(),
            ),
            0..3,
        ),
    )
        .prop_map(move |(title, abstract_text, paragraphs, cites)| {
            let (paragraphs, tags): (Vec<String>, Vec<bool>) = paragraphs.into_iter().unzip();
            let citations = if paragraphs.is_empty() {
                Vec::new()
            } else {
                cites
                    .into_iter()
                    .map(|(target, p, off)| {
                        let paragraph_index = p.index(paragraphs.len());
                        let len = paragraphs[paragraph_index].chars().count();
                        Citation {
                            target_doc_id: format!("doc{target}"),
                            paragraph_index,
                            char_offset: off.index(len + 1),
                        }
                    })
                    .collect()
            };
            Document {
                doc_id: format!("doc{id}"),
                title,
                abstract_text,
                section_tags: tags
                    .into_iter()
                    .map(|t| {
                        if t {
                            Section::Fulltext
                        } else {
                            Section::Acknowledgment
                        }
                    })
                    .collect(),
                paragraphs,
                citations,
            }
        })
}

fn corpus() -> impl Strategy<Value = Corpus> {
    (0usize..6).prop_flat_map(|n| {
        (0..n)
            .map(|i| document(i, n))
            .collect::<Vec<_>>()
            .prop_map(|docs| Corpus::new(docs).unwrap())
    })
}

fn reload(c: &Corpus) -> Corpus {
    Corpus::from_reader(c.to_jsonl().as_bytes(), Path::new("mem.jsonl")).unwrap()
}

proptest! {
    #[test]
    fn corpus_round_trips(c in corpus()) {
        let back = reload(&c);
        prop_assert_eq!(back.documents(), c.documents());
        prop_assert_eq!(reload(&back).to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn validate_is_pure(c in corpus()) {
        let before = c.clone();
        let a = validate(&c);
        let b = validate(&c);
        prop_assert_eq!(a, b);
        prop_assert_eq!(c, before);
    }

    #[test]
    fn token_counts_add_over_concatenation(a in corpus(), b in corpus()) {
        let renamed: Vec<Document> = b
            .documents()
            .iter()
            .map(|d| Document { doc_id: format!("{}-b", d.doc_id), ..d.clone() })
            .collect();
        let b = Corpus::new(renamed).unwrap();
        let joined = Corpus::new(a.documents().iter().chain(b.documents()).cloned().collect()).unwrap();
        let (sa, sb, sj) = (corpus_stats(&a, None), corpus_stats(&b, None), corpus_stats(&joined, None));
        prop_assert_eq!(sj.token_count, sa.token_count + sb.token_count);
        prop_assert_eq!(sj.paragraph_count, sa.paragraph_count + sb.paragraph_count);
        prop_assert_eq!(sj.document_count, sa.document_count + sb.document_count);
    }
}

#[test]
fn whitespace_stats_hand_count() {
    let doc = Document {
        doc_id: "a".into(),
        paragraphs: vec!["a b".into(), "c".into()],
        ..Default::default()
    };
    let stats = corpus_stats(&Corpus::new(vec![doc]).unwrap(), None);
    assert_eq!(
        (
            stats.document_count,
            stats.paragraph_count,
            stats.token_count
        ),
        (1, 2, 3)
    );
    let empty = corpus_stats(&Corpus::default(), None);
    assert_eq!(
        (
            empty.document_count,
            empty.paragraph_count,
            empty.token_count
        ),
        (0, 0, 0)
    );
}

#[test]
fn wordpiece_stats_match_encode_lengths() {
    let docs = (0..4)
        .map(|i| Document {
            doc_id: format!("d{i}"),
            paragraphs: vec![
                format!("stellar winds {i} shape nebulae"),
                "unresolved binaries, again".into(),
            ],
            ..Default::default()
        })
        .collect();
    let c = Corpus::new(docs).unwrap();
    let vocab = train_wordpiece(&c, 60, 1).unwrap();
    let by_encode: usize = c
        .paragraphs()
        .map(|p| {
            let enc = vocab.encode(p, 512);
            enc.ids
                .iter()
                .zip(&enc.special_mask)
                .filter(|(_, &s)| !s)
                .count()
        })
        .sum();
    assert_eq!(corpus_stats(&c, Some(&vocab)).token_count, by_encode);
}

const WORDS: [&str; 12] = [
    "galaxy", "dust", "quasar", "halo", "disk", "jet", "lens", "star", "nova", "ring", "void",
    "arc",
];

fn word_vocab() -> Vocabulary {
    let texts: Vec<String> = (0..20)
        .map(|i| {
            WORDS
                .iter()
                .cycle()
                .skip(i)
                .take(12)
                .copied()
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    train_wordpiece_from_texts(
        texts.iter().map(String::as_str),
        &TrainOptions {
            vocab_size: 120,
            ..Default::default()
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn in_vocab_text_decodes_to_itself(idx in prop::collection::vec(0usize..12, 0..20)) {
        let vocab = word_vocab();
        let text = idx.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ");
        let enc = vocab.encode(&text, 64);
        prop_assert_eq!(vocab.decode(&enc.ids).unwrap(), text);
    }

    #[test]
    fn encodings_respect_length_and_vocab(text in "\\PC{0,80}", max_len in 2usize..40) {
        let vocab = word_vocab();
        let enc = vocab.encode(&text, max_len);
        prop_assert!(enc.len() <= max_len);
        let attended: usize = enc.attention_mask.iter().map(|&m| m as usize).sum();
        prop_assert_eq!(attended, enc.used_len());
        prop_assert!(enc.ids.iter().all(|&id| (id as usize) < vocab.len()));
        let pair = vocab.encode_pair(&text, "dust halo", max_len.max(3));
        prop_assert!(pair.len() <= max_len.max(3));
        prop_assert!(pair.ids.iter().all(|&id| (id as usize) < vocab.len()));
    }
}

#[test]
fn vocabulary_file_round_trips() {
    let vocab = word_vocab();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    std::fs::write(&path, vocab.to_text()).unwrap();
    assert_eq!(Vocabulary::load(&path).unwrap(), vocab);
    assert_eq!(
        &vocab.tokens()[..SPECIAL_TOKENS.len()],
        &SPECIAL_TOKENS.map(String::from)[..]
    );
}
