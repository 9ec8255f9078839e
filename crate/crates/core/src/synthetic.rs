//! Seeded synthetic corpora with structure a small model can learn: topic
//! corpora with disjoint vocabularies, a closed-lexicon tagging grammar, and
//! citation graphs whose contexts share words with the cited abstracts.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::corpus::{Citation, Corpus, Document, Section};
use crate::ner::{LabeledSequence, TagSet};
use crate::seed;
use crate::tokenizer::{Vocabulary, SPECIAL_TOKENS};

const SYNTH: u64 = 0x5379_6e74;

fn vocabulary<'a>(words: impl IntoIterator<Item = &'a str>) -> Vocabulary {
    Vocabulary::from_tokens(SPECIAL_TOKENS.iter().copied().chain(words))
        .expect("synthetic words are distinct")
}

/// Two topics with no shared words; 30 tokens with the specials.
pub const TOPICS: [&[&str]; 2] = [
    &[
        "star", "orbit", "planet", "comet", "moon", "sun", "nova", "disk", "ring", "dust", "gas",
        "halo", "core",
    ],
    &[
        "cell", "gene", "leaf", "root", "seed", "stem", "bark", "moss", "fern", "vine", "bud",
        "sap",
    ],
];

const MOTIF: usize = 2;

pub fn topic_vocabulary() -> Vocabulary {
    vocabulary(TOPICS.iter().flat_map(|t| t.iter().copied()))
}

/// A motif of `MOTIF` consecutive topic words, repeated to a random length.
fn topic_sentence(words: &[&str], rng: &mut impl Rng, min: usize, max: usize) -> String {
    let start = rng.random_range(0..words.len());
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|i| words[(start + i % MOTIF) % words.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

/// One document per topic, each with `sentences_per_topic` one-sentence
/// paragraphs.
pub fn topic_corpus(sentences_per_topic: usize, seed: u64) -> Corpus {
    let docs = TOPICS
        .iter()
        .enumerate()
        .map(|(t, words)| {
            let mut rng = seed::rng(&[SYNTH, 1, seed, t as u64]);
            Document {
                doc_id: format!("topic{t}-{seed}"),
                title: format!("topic {t}"),
                paragraphs: (0..sentences_per_topic)
                    .map(|_| topic_sentence(words, &mut rng, 10, 16))
                    .collect(),
                ..Default::default()
            }
        })
        .collect();
    Corpus::new(docs).expect("unique ids")
}

/// Words used by [`tagging_corpus`]: fillers, then per type two `B-` words
/// and two `I-` words.
pub const FILLERS: [&str; 16] = [
    "the", "of", "and", "we", "with", "data", "using", "from", "in", "observed", "were", "by",
    "at", "for", "this", "our",
];

pub fn begin_words(entity_type: usize) -> [String; 2] {
    [format!("t{entity_type}b0"), format!("t{entity_type}b1")]
}

pub fn inside_words(entity_type: usize) -> [String; 2] {
    [format!("t{entity_type}i0"), format!("t{entity_type}i1")]
}

pub fn tagging_vocabulary(tagset: &TagSet) -> Vocabulary {
    let mut words: Vec<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    for t in 0..tagset.entity_types().len() {
        words.extend(begin_words(t));
        words.extend(inside_words(t));
    }
    vocabulary(words.iter().map(String::as_str))
}

/// Sentences of filler words and entities. An entity is one `B-` word from
/// its type's list followed by zero to two `I-` words.
pub fn tagging_corpus(tagset: &TagSet, sequences: usize, seed: u64) -> Vec<LabeledSequence> {
    let types = tagset.entity_types();
    (0..sequences)
        .map(|i| {
            let mut rng = seed::rng(&[SYNTH, 2, seed, i as u64]);
            let mut seq = LabeledSequence {
                section: if rng.random_bool(0.7) {
                    Section::Fulltext
                } else {
                    Section::Acknowledgment
                },
                ..Default::default()
            };
            let target = rng.random_range(6..=12);
            while seq.tokens.len() < target {
                if rng.random_bool(0.35) {
                    let t = rng.random_range(0..types.len());
                    seq.tokens
                        .push(begin_words(t).choose(&mut rng).unwrap().clone());
                    seq.labels.push(format!("B-{}", types[t]));
                    for _ in 0..rng.random_range(0..=2) {
                        seq.tokens
                            .push(inside_words(t).choose(&mut rng).unwrap().clone());
                        seq.labels.push(format!("I-{}", types[t]));
                    }
                } else {
                    seq.tokens
                        .push(FILLERS.choose(&mut rng).unwrap().to_string());
                    seq.labels.push("O".into());
                }
            }
            seq
        })
        .collect()
}

/// Four topics for the citation corpus, twelve words each.
pub const CITATION_TOPICS: [[&str; 12]; 4] = [
    [
        "galaxy", "cluster", "redshift", "lensing", "halo", "merger", "spiral", "bulge", "quasar",
        "jet", "radio", "dwarf",
    ],
    [
        "exoplanet",
        "transit",
        "radial",
        "host",
        "orbit",
        "habitable",
        "atmosphere",
        "rocky",
        "giant",
        "tidal",
        "eclipse",
        "period",
    ],
    [
        "solar",
        "flare",
        "corona",
        "wind",
        "spot",
        "magnetic",
        "loop",
        "plasma",
        "cycle",
        "prominence",
        "heliosphere",
        "chromosphere",
    ],
    [
        "telescope",
        "mirror",
        "detector",
        "spectrograph",
        "calibration",
        "pixel",
        "noise",
        "optics",
        "survey",
        "filter",
        "camera",
        "array",
    ],
];

pub const IDENTIFIERS: usize = 60;

fn identifier(i: usize) -> String {
    format!("id{i}")
}

pub fn citation_vocabulary() -> Vocabulary {
    let ids: Vec<String> = (0..IDENTIFIERS).map(identifier).collect();
    vocabulary(
        CITATION_TOPICS
            .iter()
            .flat_map(|t| t.iter().copied())
            .chain(ids.iter().map(String::as_str)),
    )
}

fn topic_words(words: &[&str], ids: &[String], n: usize, rng: &mut impl Rng) -> String {
    let mut tokens: Vec<String> = (0..n)
        .map(|_| words.choose(rng).unwrap().to_string())
        .collect();
    tokens.extend(ids.iter().cloned());
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// `citing_docs` documents, each citing `cites_per_doc` distinct cited
/// documents of its own topic. A cited abstract and every context that cites
/// it share three identifier words unique to that cited document.
pub fn citation_corpus(citing_docs: usize, cites_per_doc: usize, seed: u64) -> Corpus {
    let mut rng = seed::rng(&[SYNTH, 3, seed]);
    let mut combos = std::collections::BTreeSet::new();
    let mut cited = Vec::new();
    let mut citing = Vec::new();
    for d in 0..citing_docs {
        let topic = d % CITATION_TOPICS.len();
        let words = &CITATION_TOPICS[topic];
        let mut doc = Document {
            doc_id: format!("citing{d:03}"),
            title: format!("citing {d}"),
            ..Default::default()
        };
        doc.abstract_text = topic_words(words, &[], 10, &mut rng);
        for k in 0..cites_per_doc {
            let ids = loop {
                let mut pick: Vec<usize> =
                    rand::seq::index::sample(&mut rng, IDENTIFIERS, 3).into_vec();
                pick.sort_unstable();
                if combos.insert(pick.clone()) {
                    break pick.into_iter().map(identifier).collect::<Vec<_>>();
                }
            };
            let cited_id = format!("cited{d:03}-{k}");
            cited.push(Document {
                doc_id: cited_id.clone(),
                title: format!("cited {d} {k}"),
                abstract_text: topic_words(words, &ids, 7, &mut rng),
                ..Default::default()
            });
            let paragraph = topic_words(words, &ids, 8, &mut rng);
            doc.citations.push(Citation {
                target_doc_id: cited_id,
                paragraph_index: k,
                char_offset: paragraph.chars().count(),
            });
            doc.paragraphs.push(paragraph);
        }
        citing.push(doc);
    }
    citing.extend(cited);
    Corpus::new(citing).expect("unique ids")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_fixture_shape() {
        let v = topic_vocabulary();
        assert_eq!(v.len(), 30);
        let c = topic_corpus(25, 1);
        assert_eq!(c.paragraphs().count(), 50);
        for p in c.paragraphs() {
            assert!(!v.tokenize_ids(p).contains(&crate::tokenizer::UNK));
        }
        assert_eq!(c, topic_corpus(25, 1));
    }

    #[test]
    fn tagging_fixture_is_valid_and_in_vocabulary() {
        let ts = TagSet::default();
        let v = tagging_vocabulary(&ts);
        let data = tagging_corpus(&ts, 50, 3);
        let text = crate::ner::to_conll(&data);
        let back = crate::ner::parse_conll(text.as_bytes(), std::path::Path::new("x")).unwrap();
        assert_eq!(back, data);
        for s in &data {
            for w in &s.tokens {
                assert!(v.id(w).is_some(), "{w}");
            }
        }
    }

    #[test]
    fn citation_fixture_mines_one_pair_per_citation() {
        let c = citation_corpus(8, 3, 2);
        let pairs = crate::sts::mine_pairs(&c, &Default::default());
        assert_eq!(pairs.len(), 24);
        let v = citation_vocabulary();
        for p in &pairs {
            assert!(!v
                .tokenize_ids(&p.query_text)
                .contains(&crate::tokenizer::UNK));
        }
    }
}
