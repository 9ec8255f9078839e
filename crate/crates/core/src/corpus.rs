//! Citation-annotated document collections.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"doc_id": "a", "title": "...", "abstract": "...",
//!  "paragraphs": ["...", "..."],
//!  "citations": [{"target_doc_id": "b", "paragraph_index": 1, "char_offset": 5}],
//!  "section_tags": ["fulltext", "acknowledgment"]}
//! ```
//!
//! Citation offsets count Unicode code points. `section_tags` is optional and
//! defaults to `fulltext` for every paragraph. Unknown keys are ignored.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Which part of a paper a paragraph comes from.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    #[default]
    Fulltext,
    Acknowledgment,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Fulltext => "fulltext",
            Section::Acknowledgment => "acknowledgment",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Section {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fulltext" => Ok(Section::Fulltext),
            "acknowledgment" => Ok(Section::Acknowledgment),
            other => Err(Error::invalid(format!("unknown section tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub target_doc_id: String,
    pub paragraph_index: usize,
    /// Position of the citation marker in code points.
    pub char_offset: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub paragraphs: Vec<String>,
    #[serde(default)]
    pub citations: Vec<Citation>,
    /// One entry per paragraph once loaded.
    #[serde(default)]
    pub section_tags: Vec<Section>,
}

impl Document {
    /// Checks the per-document invariants and fills in default section tags.
    fn normalize(&mut self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("doc_id is empty".into());
        }
        if self.section_tags.is_empty() {
            self.section_tags = vec![Section::Fulltext; self.paragraphs.len()];
        } else if self.section_tags.len() != self.paragraphs.len() {
            return Err(format!(
                "section_tags has {} entries but there are {} paragraphs",
                self.section_tags.len(),
                self.paragraphs.len()
            ));
        }
        for (i, c) in self.citations.iter().enumerate() {
            if c.target_doc_id.is_empty() {
                return Err(format!("citations[{i}].target_doc_id is empty"));
            }
            let Some(paragraph) = self.paragraphs.get(c.paragraph_index) else {
                return Err(format!(
                    "citations[{i}].paragraph_index = {} out of range ({} paragraphs)",
                    c.paragraph_index,
                    self.paragraphs.len()
                ));
            };
            let len = paragraph.chars().count();
            if c.char_offset > len {
                return Err(format!(
                    "citations[{i}].char_offset = {} out of range (paragraph has {len} chars)",
                    c.char_offset
                ));
            }
        }
        Ok(())
    }

    pub fn section(&self, paragraph_index: usize) -> Section {
        self.section_tags
            .get(paragraph_index)
            .copied()
            .unwrap_or_default()
    }
}

/// An immutable, validated collection of documents indexed by `doc_id`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, checking every document invariant.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, doc) in documents.into_iter().enumerate() {
            corpus.push(doc, i + 1, Path::new("<memory>"))?;
        }
        Ok(corpus)
    }

    fn push(&mut self, mut doc: Document, line: usize, path: &Path) -> Result<()> {
        doc.normalize().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("doc {:?}: {message}", doc.doc_id),
        })?;
        if self.index.contains_key(&doc.doc_id) {
            return Err(Error::DuplicateDocId {
                doc_id: doc.doc_id,
                line,
            });
        }
        self.index.insert(doc.doc_id.clone(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).copied()
    }

    /// Iterates over every paragraph in corpus order.
    pub fn paragraphs(&self) -> impl Iterator<Item = &str> {
        self.documents
            .iter()
            .flat_map(|d| d.paragraphs.iter().map(String::as_str))
    }

    /// Reads JSON lines from any reader; `path` is used only in diagnostics.
    pub fn from_reader<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            corpus.push(doc, line_no, path)?;
        }
        Ok(corpus)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(BufReader::new(file), path)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DanglingCitation {
    pub citing_doc_id: String,
    pub target_doc_id: String,
}

/// Problems found by [`validate`]. None of them prevent loading.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub dangling_citations: Vec<DanglingCitation>,
    /// Documents whose empty abstract makes them ineligible as pair-mining targets.
    pub empty_abstracts: Vec<String>,
    /// `(doc_id, paragraph_index)` of blank paragraphs.
    pub empty_paragraphs: Vec<(String, usize)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.dangling_citations.is_empty()
            && self.empty_abstracts.is_empty()
            && self.empty_paragraphs.is_empty()
    }
}

pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    for doc in corpus.documents() {
        for c in &doc.citations {
            if corpus.get(&c.target_doc_id).is_none() {
                report.dangling_citations.push(DanglingCitation {
                    citing_doc_id: doc.doc_id.clone(),
                    target_doc_id: c.target_doc_id.clone(),
                });
            }
        }
        if doc.abstract_text.trim().is_empty() {
            report.empty_abstracts.push(doc.doc_id.clone());
        }
        for (i, p) in doc.paragraphs.iter().enumerate() {
            if p.trim().is_empty() {
                report.empty_paragraphs.push((doc.doc_id.clone(), i));
            }
        }
    }
    report
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub document_count: usize,
    pub paragraph_count: usize,
    pub token_count: usize,
}

/// Counts documents, paragraphs and tokens. Tokens are WordPiece pieces when a
/// vocabulary is given and whitespace-separated words otherwise.
pub fn corpus_stats(corpus: &Corpus, vocab: Option<&Vocabulary>) -> CorpusStats {
    let token_count = corpus
        .paragraphs()
        .map(|p| match vocab {
            Some(v) => v.tokenize(p).len(),
            None => p.split_whitespace().count(),
        })
        .sum();
    CorpusStats {
        document_count: corpus.len(),
        paragraph_count: corpus.paragraphs().count(),
        token_count,
    }
}
