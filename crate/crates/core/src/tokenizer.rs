//! WordPiece vocabulary training and BERT-style encoding.
//!
//! Text is pre-tokenized by splitting on whitespace and then splitting every
//! punctuation character off as its own word. Words are segmented by greedy
//! longest-match-first against the vocabulary; word-internal pieces carry the
//! `##` prefix.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

pub const CONTINUATION: &str = "##";

/// Words longer than this many characters are mapped straight to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIAL
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || ('\u{2000}'..='\u{206F}').contains(&c)
        || ('\u{3000}'..='\u{303F}').contains(&c)
        || matches!(c, '¡' | '¿' | '«' | '»' | '§' | '¶' | '·')
}

/// Splits text into words: whitespace first, then punctuation as single tokens.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                let end = i + c.len_utf8();
                words.push(&chunk[i..end]);
                start = end;
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// An ordered token table whose first five entries are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    lowercase: bool,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < NUM_SPECIAL
            || tokens[..NUM_SPECIAL]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(t, s)| t != s)
        {
            return Err(Error::Vocabulary(format!(
                "the first {NUM_SPECIAL} tokens must be {SPECIAL_TOKENS:?}"
            )));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t == CONTINUATION {
                return Err(Error::Vocabulary(format!("empty token at id {i}")));
            }
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocabulary(format!(
                    "duplicate token {t:?} at id {i}"
                )));
            }
        }
        Ok(Vocabulary {
            tokens,
            id_of,
            lowercase: false,
        })
    }

    /// Lowercases input text before pre-tokenization.
    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Reads a `vocab.txt` file: one token per line, line number = id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            tokens.push(line.trim_end_matches('\r').to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tokens are UTF-8")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn normalize<'a>(&self, text: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            text.to_lowercase().into()
        } else {
            text.into()
        }
    }

    /// Greedy longest-match-first segmentation of one word.
    fn segment_word(&self, word: &str, out: &mut Vec<TokenId>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(UNK);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |&(b, _)| b);
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.push_str(&word[from..to]);
                if let Some(id) = self.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(UNK);
                    return;
                }
            }
        }
    }

    /// Token ids of `text` without special tokens or truncation.
    pub fn tokenize_ids(&self, text: &str) -> Vec<TokenId> {
        let text = self.normalize(text);
        let mut ids = Vec::new();
        for word in pre_tokenize(&text) {
            self.segment_word(word, &mut ids);
        }
        ids
    }

    /// Token strings of `text` without special tokens or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenize_ids(text)
            .into_iter()
            .map(|id| self.tokens[id as usize].clone())
            .collect()
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        let mut ids = self.tokenize_ids(text);
        ids.truncate(max_len.saturating_sub(2));
        Encoding::build(self, &ids, None, max_len)
    }

    /// `[CLS] a [SEP] b [SEP]`, truncating the longer side first when over-long.
    pub fn encode_pair(&self, a: &str, b: &str, max_len: usize) -> Encoding {
        let mut ids_a = self.tokenize_ids(a);
        let mut ids_b = self.tokenize_ids(b);
        let budget = max_len.saturating_sub(3);
        while ids_a.len() + ids_b.len() > budget {
            if ids_a.len() > ids_b.len() {
                ids_a.pop();
            } else {
                ids_b.pop();
            }
        }
        Encoding::build(self, &ids_a, Some(&ids_b), max_len)
    }

    /// Encodes pre-split words and reports the position of each word's first
    /// piece (`None` when the word was truncated away).
    pub fn encode_words<S: AsRef<str>>(
        &self,
        words: &[S],
        max_len: usize,
    ) -> (Encoding, Vec<Option<usize>>) {
        let budget = max_len.saturating_sub(2);
        let mut ids = Vec::new();
        let mut starts = Vec::with_capacity(words.len());
        for word in words {
            let text = self.normalize(word.as_ref());
            let first = ids.len();
            for piece in pre_tokenize(&text) {
                self.segment_word(piece, &mut ids);
            }
            if ids.len() == first {
                // Whitespace-only word; keep it scorable.
                ids.push(UNK);
            }
            starts.push((first < budget).then_some(first + 1));
        }
        ids.truncate(budget);
        (Encoding::build(self, &ids, None, max_len), starts)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let token = self
                .token(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range")))?;
            if is_special(id) {
                continue;
            }
            match token.strip_prefix(CONTINUATION) {
                Some(rest) => text.push_str(rest),
                None => {
                    if !text.is_empty() {
                        text.push(' ');
                    }
                    text.push_str(token);
                }
            }
        }
        Ok(text)
    }
}

/// The id / segment / mask view of a text or text pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// True at `[CLS]`, `[SEP]` and `[PAD]` positions.
    pub special_mask: Vec<bool>,
    pub tokens: Vec<String>,
}

impl Encoding {
    fn build(vocab: &Vocabulary, a: &[TokenId], b: Option<&[TokenId]>, max_len: usize) -> Self {
        let mut ids = Vec::with_capacity(max_len);
        let mut segment_ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend_from_slice(a);
        ids.push(SEP);
        segment_ids.resize(ids.len(), 0);
        if let Some(b) = b {
            ids.extend_from_slice(b);
            ids.push(SEP);
            segment_ids.resize(ids.len(), 1);
        }
        let used = ids.len();
        // Padding positions carry segment 0 in the BERT convention.
        ids.resize(max_len.max(used), PAD);
        segment_ids.resize(ids.len(), 0);
        let attention_mask = (0..ids.len()).map(|i| u8::from(i < used)).collect();
        let special_mask = ids
            .iter()
            .map(|&id| is_special(id) && id != UNK && id != MASK)
            .collect();
        let tokens = ids
            .iter()
            .map(|&id| vocab.tokens[id as usize].clone())
            .collect();
        Encoding {
            ids,
            segment_ids,
            attention_mask,
            special_mask,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn used_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Encoding {
    vocab.encode(text, max_len)
}

pub fn encode_pair(a: &str, b: &str, vocab: &Vocabulary, max_len: usize) -> Encoding {
    vocab.encode_pair(a, b, max_len)
}

pub fn decode(ids: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    vocab.decode(ids)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub lowercase: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            vocab_size: 1000,
            min_frequency: 1,
            lowercase: false,
        }
    }
}

pub fn train_wordpiece(
    corpus: &Corpus,
    vocab_size: usize,
    min_frequency: u64,
) -> Result<Vocabulary> {
    train_wordpiece_from_texts(
        corpus.paragraphs(),
        &TrainOptions {
            vocab_size,
            min_frequency,
            lowercase: false,
        },
    )
}

/// Learns a vocabulary by iterative pair merging.
///
/// Each round merges the adjacent pair maximizing
/// `freq(pair) / (freq(left) * freq(right))`, ties going to the
/// lexicographically smallest merged string. Training stops when the
/// vocabulary is full or no pair reaches `min_frequency`.
pub fn train_wordpiece_from_texts<'a, I>(texts: I, opts: &TrainOptions) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if opts.min_frequency == 0 {
        return Err(Error::invalid("min_frequency must be at least 1"));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        let text = if opts.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        for w in pre_tokenize(&text) {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::invalid(
            "cannot train a vocabulary on an empty corpus",
        ));
    }

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (w, &n) in &word_counts {
        for c in w.chars() {
            *char_counts.entry(c).or_default() += n;
        }
    }
    let alphabet: Vec<char> = char_counts
        .iter()
        .filter(|&(_, &n)| n >= opts.min_frequency)
        .map(|(&c, _)| c)
        .collect();
    let needed = NUM_SPECIAL + 2 * alphabet.len();
    if opts.vocab_size < needed {
        return Err(Error::invalid(format!(
            "vocab_size {} cannot hold the special tokens plus a {}-unit alphabet (need {needed})",
            opts.vocab_size,
            2 * alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    tokens.extend(alphabet.iter().map(|c| format!("{CONTINUATION}{c}")));
    let mut id_of: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    // Words made only of alphabet characters, as unit-id sequences.
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .filter(|(w, _)| w.chars().all(|c| alphabet.binary_search(&c).is_ok()))
        .map(|(w, &n)| {
            let units = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    let key = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    id_of[&key]
                })
                .collect();
            (units, n)
        })
        .collect();

    let merged_name = |tokens: &[String], l: u32, r: u32| -> String {
        let right = &tokens[r as usize];
        format!(
            "{}{}",
            tokens[l as usize],
            right.strip_prefix(CONTINUATION).unwrap_or(right)
        )
    };

    while tokens.len() < opts.vocab_size {
        let mut unit_freq = vec![0u64; tokens.len()];
        let mut pair_freq: HashMap<(u32, u32), u64> = HashMap::new();
        for (units, n) in &words {
            for &u in units {
                unit_freq[u as usize] += n;
            }
            for w in units.windows(2) {
                *pair_freq.entry((w[0], w[1])).or_default() += n;
            }
        }

        let mut best: Option<((u32, u32), u64, String)> = None;
        for (&(l, r), &f) in &pair_freq {
            if f < opts.min_frequency {
                continue;
            }
            let better = match &best {
                None => true,
                Some(((bl, br), bf, bname)) => {
                    // Compare f / (fl * fr) exactly by cross-multiplication.
                    let lhs = f as u128
                        * unit_freq[*bl as usize] as u128
                        * unit_freq[*br as usize] as u128;
                    let rhs =
                        *bf as u128 * unit_freq[l as usize] as u128 * unit_freq[r as usize] as u128;
                    lhs > rhs || (lhs == rhs && merged_name(&tokens, l, r) < *bname)
                }
            };
            if better {
                best = Some(((l, r), f, merged_name(&tokens, l, r)));
            }
        }
        let Some(((l, r), _, name)) = best else {
            break;
        };

        let merged = match id_of.get(&name) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                id_of.insert(name.clone(), id);
                tokens.push(name);
                id
            }
        };
        for (units, _) in &mut words {
            if units.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(units.len());
            let mut i = 0;
            while i < units.len() {
                if i + 1 < units.len() && units[i] == l && units[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(units[i]);
                    i += 1;
                }
            }
            *units = out;
        }
    }

    Ok(Vocabulary::from_tokens(tokens)?.with_lowercase(opts.lowercase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document};
    use proptest::prelude::*;

    fn vocab(extra: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(SPECIAL_TOKENS.iter().chain(extra).copied()).unwrap()
    }

    fn doc_corpus(paragraphs: &[&str]) -> Corpus {
        Corpus::new(vec![Document {
            doc_id: "d".into(),
            title: String::new(),
            abstract_text: String::new(),
            paragraphs: paragraphs.iter().map(|s| s.to_string()).collect(),
            citations: vec![],
            section_tags: vec![],
        }])
        .unwrap()
    }

    #[test]
    fn pre_tokenize_splits_punctuation() {
        assert_eq!(
            pre_tokenize("M31, (NGC 224)."),
            vec!["M31", ",", "(", "NGC", "224", ")", "."]
        );
        assert!(pre_tokenize("   ").is_empty());
    }

    #[test]
    fn aaab_merges_follow_the_scoring_rule() {
        // Hand trace, N copies of "aaab":
        //   units a:N ##a:2N ##b:N; pairs (a,##a) (##a,##a) (##a,##b) each N.
        //   scores 1/2N, 1/4N, 1/2N -> tie, "##ab" < "aa" -> merge "##ab".
        //   then (a,##a) and (##a,##ab) both score 1/N -> "##aab" < "aa".
        //   then (a,##aab) -> "aaab". No pairs remain.
        let c = doc_corpus(&["aaab aaab aaab", "aaab"]);
        let v = train_wordpiece(&c, 20, 1).unwrap();
        let expected: Vec<&str> = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(["a", "b", "##a", "##b", "##ab", "##aab", "aaab"])
            .collect();
        assert_eq!(v.tokens(), expected.as_slice());
    }

    #[test]
    fn no_room_means_no_merges() {
        let c = doc_corpus(&["aaab"]);
        let v = train_wordpiece(&c, 5 + 4, 1).unwrap();
        assert_eq!(v.len(), 9);
        for t in ["a", "##a", "b", "##b"] {
            assert!(v.id(t).is_some());
        }
        assert!(train_wordpiece(&c, 8, 1).is_err());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = Corpus::new(vec![]).unwrap();
        assert!(train_wordpiece(&c, 100, 1).is_err());
    }

    #[test]
    fn min_frequency_filters_alphabet() {
        let c = doc_corpus(&["aa aa aa z"]);
        let v = train_wordpiece(&c, 50, 2).unwrap();
        assert!(v.id("z").is_none());
        assert!(v.id("a").is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let c = doc_corpus(&["the quick brown fox jumps", "over the lazy dog", "the fox"]);
        let a = train_wordpiece(&c, 60, 1).unwrap();
        let b = train_wordpiece(&c, 60, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 60);
    }

    #[test]
    fn empty_text_encodes_to_cls_sep_padding() {
        let v = vocab(&[]);
        let e = v.encode("", 5);
        assert_eq!(e.ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(e.attention_mask, vec![1, 1, 0, 0, 0]);
        assert_eq!(e.special_mask, vec![true; 5]);
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["un", "##able", "able", "unable_x"]);
        assert_eq!(v.tokenize("unable"), vec!["un", "##able"]);
        assert_eq!(v.tokenize("able"), vec!["able"]);
        assert_eq!(v.tokenize("unablex"), vec!["[UNK]"]);
        let v = vocab(&["unable", "un", "##able"]);
        assert_eq!(v.tokenize("unable"), vec!["unable"]);
    }

    #[test]
    fn truncation_keeps_final_sep() {
        let v = vocab(&["a", "b", "c"]);
        let e = v.encode("a b c", 4);
        assert_eq!(e.tokens, vec!["[CLS]", "a", "b", "[SEP]"]);
    }

    #[test]
    fn pair_layout() {
        let v = vocab(&["x", "y"]);
        let e = v.encode_pair("x", "y", 8);
        assert_eq!(
            e.tokens,
            vec!["[CLS]", "x", "[SEP]", "y", "[SEP]", "[PAD]", "[PAD]", "[PAD]"]
        );
        assert_eq!(e.segment_ids, vec![0, 0, 0, 1, 1, 0, 0, 0]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 1, 0, 0, 0]);

        let e = v.encode_pair("", "", 3);
        assert_eq!(e.ids, vec![CLS, SEP, SEP]);
    }

    #[test]
    fn pair_truncates_longer_side_first() {
        let v = vocab(&["x", "y"]);
        let e = v.encode_pair("x x x x x x", "y y", 8);
        assert_eq!(
            e.tokens,
            vec!["[CLS]", "x", "x", "x", "[SEP]", "y", "y", "[SEP]"]
        );
        let e = v.encode_pair("x x x x x x", "y y y y y y", 9);
        let xs = e.tokens.iter().filter(|t| *t == "x").count();
        let ys = e.tokens.iter().filter(|t| *t == "y").count();
        assert_eq!((xs, ys), (3, 3));
    }

    #[test]
    fn encode_words_reports_first_pieces() {
        let v = vocab(&["un", "##able", "obs"]);
        let (e, starts) = v.encode_words(&["unable", "obs", "unable"], 6);
        assert_eq!(
            e.tokens,
            vec!["[CLS]", "un", "##able", "obs", "un", "[SEP]"]
        );
        assert_eq!(starts, vec![Some(1), Some(3), Some(4)]);
        let (_, starts) = v.encode_words(&["obs", "obs", "obs"], 4);
        assert_eq!(starts, vec![Some(1), Some(2), None]);
    }

    #[test]
    fn decode_rules() {
        let v = vocab(&["un", "##able", "star"]);
        let ids = [CLS, 5, 6, 7, SEP, PAD];
        assert_eq!(v.decode(&ids).unwrap(), "unable star");
        assert_eq!(v.decode(&[CLS, SEP]).unwrap(), "");
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab(&["a", "##b"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, v.to_text()).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }

    #[test]
    fn specials_must_lead() {
        assert!(Vocabulary::from_tokens(["[PAD]", "[CLS]", "[UNK]", "[SEP]", "[MASK]"]).is_err());
        assert!(
            Vocabulary::from_tokens(SPECIAL_TOKENS.iter().chain(&["a", "a"]).copied()).is_err()
        );
    }

    proptest! {
        #[test]
        fn in_vocab_round_trip(words in prop::collection::vec(0usize..6, 0..12)) {
            let pool = ["alpha", "beta", "gamma", "delta", "ngc", "quasar"];
            let v = vocab(&pool);
            let text = words.iter().map(|&i| pool[i]).collect::<Vec<_>>().join(" ");
            let e = v.encode(&text, 16);
            prop_assert_eq!(v.decode(&e.ids).unwrap(), text);
        }

        #[test]
        fn encodings_respect_length_and_mask(text in "[a-c ,.]{0,60}", max_len in 2usize..20) {
            let v = vocab(&["a", "b", "##a", "##b", "##c", ","]);
            let e = v.encode(&text, max_len);
            prop_assert_eq!(e.len(), max_len);
            prop_assert_eq!(e.segment_ids.len(), max_len);
            prop_assert_eq!(e.attention_mask.len(), max_len);
            let used = e.used_len();
            prop_assert!(e.attention_mask[..used].iter().all(|&m| m == 1));
            prop_assert!(e.ids[used..].iter().all(|&id| id == PAD));
            prop_assert!(e.ids.iter().all(|&id| (id as usize) < v.len()));
        }

        #[test]
        fn pair_segments_are_nondecreasing(a in "[ab ]{0,30}", b in "[ab ]{0,30}", max_len in 3usize..16) {
            let v = vocab(&["a", "b"]);
            let e = v.encode_pair(&a, &b, max_len);
            prop_assert_eq!(e.len(), max_len);
            let used = e.used_len();
            prop_assert!(e.segment_ids[..used].windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(e.ids.iter().filter(|&&id| id == SEP).count(), 2);
        }
    }
}
