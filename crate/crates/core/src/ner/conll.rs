//! CoNLL-style token files: `token<TAB>label` per line, a blank line between
//! sequences, and an optional `#section=fulltext|acknowledgment` line before
//! a sequence.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Section;
use crate::error::{Error, Result};
use crate::ner::tags::{first_iob2_violation, split_label};

const SECTION_DIRECTIVE: &str = "#section=";

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub section: Section,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn load_conll(path: impl AsRef<Path>) -> Result<Vec<LabeledSequence>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_conll(std::io::BufReader::new(file), path)
}

/// Like [`load_conll`] but accepts label sequences that break IOB2, as raw
/// baseline predictions do.
pub fn load_conll_predictions(path: impl AsRef<Path>) -> Result<Vec<LabeledSequence>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse(std::io::BufReader::new(file), path, false)
}

/// Splits a line into token and label: on the first tab if present, else on
/// the last run of whitespace.
fn split_line(line: &str) -> Option<(&str, &str)> {
    let (token, label) = match line.split_once('\t') {
        Some(parts) => parts,
        None => line.trim_end().rsplit_once(char::is_whitespace)?,
    };
    let (token, label) = (token.trim(), label.trim());
    (!token.is_empty() && !label.is_empty()).then_some((token, label))
}

pub fn parse_conll<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LabeledSequence>> {
    parse(reader, path, true)
}

fn parse<R: BufRead>(reader: R, path: &Path, check_iob2: bool) -> Result<Vec<LabeledSequence>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut current = LabeledSequence::default();
    let mut line_numbers: Vec<usize> = Vec::new();
    let mut pending_section: Option<Section> = None;

    let finish = |current: &mut LabeledSequence,
                  line_numbers: &mut Vec<usize>,
                  pending: &mut Option<Section>,
                  out: &mut Vec<LabeledSequence>|
     -> Result<()> {
        if current.is_empty() {
            return Ok(());
        }
        let lexical = current
            .labels
            .iter()
            .map(|l| split_label(l).expect("checked per line"));
        if let Some(i) = first_iob2_violation(lexical).filter(|_| check_iob2) {
            return Err(parse_err(
                line_numbers[i],
                format!(
                    "{} does not continue an entity of the same type",
                    current.labels[i]
                ),
            ));
        }
        current.section = pending.take().unwrap_or_default();
        out.push(std::mem::take(current));
        line_numbers.clear();
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_prefix('\u{feff}').unwrap_or(&line);
        if line.trim().is_empty() {
            finish(
                &mut current,
                &mut line_numbers,
                &mut pending_section,
                &mut out,
            )?;
            continue;
        }
        if let Some(value) = line.strip_prefix(SECTION_DIRECTIVE) {
            if !current.is_empty() {
                return Err(parse_err(
                    lineno,
                    "section directive inside a sequence".into(),
                ));
            }
            let section = value
                .trim()
                .parse::<Section>()
                .map_err(|_| parse_err(lineno, format!("unknown section {:?}", value.trim())))?;
            pending_section = Some(section);
            continue;
        }
        let (token, label) = split_line(line).ok_or_else(|| {
            parse_err(lineno, format!("expected `token<TAB>label`, got {line:?}"))
        })?;
        if split_label(label).is_none() {
            return Err(parse_err(lineno, format!("{label:?} is not an IOB2 label")));
        }
        current.tokens.push(token.to_string());
        current.labels.push(label.to_string());
        line_numbers.push(lineno);
    }
    finish(
        &mut current,
        &mut line_numbers,
        &mut pending_section,
        &mut out,
    )?;
    Ok(out)
}

/// Inverse of [`parse_conll`]. Sections are always written.
pub fn to_conll(sequences: &[LabeledSequence]) -> String {
    let mut s = String::new();
    for seq in sequences {
        s.push_str(SECTION_DIRECTIVE);
        s.push_str(seq.section.as_str());
        s.push('\n');
        for (t, l) in seq.tokens.iter().zip(&seq.labels) {
            s.push_str(t);
            s.push('\t');
            s.push_str(l);
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<LabeledSequence>> {
        parse_conll(text.as_bytes(), Path::new("t.conll"))
    }

    #[test]
    fn two_column_fixture() {
        let seqs = parse("obs B-Tel\n.\tO\n\n").unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].tokens, ["obs", "."]);
        assert_eq!(seqs[0].labels, ["B-Tel", "O"]);
        assert_eq!(seqs[0].section, Section::Fulltext);
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn leading_inside_is_rejected_with_line() {
        match parse("\nx I-Tel\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("I-Tel"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("a\tB-Tel\nb\tI-Eve\n").is_err());
    }

    #[test]
    fn sections_and_round_trip() {
        let text = "#section=acknowledgment\nNASA\tB-Org\ngrant\tO\n\nHubble\tB-Tel\n";
        let seqs = parse(text).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].section, Section::Acknowledgment);
        assert_eq!(seqs[1].section, Section::Fulltext);
        assert_eq!(parse(&to_conll(&seqs)).unwrap(), seqs);
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            parse("lonely\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("a\tB-x\nb\tQ\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("#section=methods\na\tO\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
