use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TYPES: &str = include_str!("../../data/entity_types.txt");

/// An IOB2 tag with its entity type as an index into a [`TagSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl Tag {
    pub fn entity_type(self) -> Option<usize> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

/// Label ids: `O` = 0, `B-t` = 1 + 2t, `I-t` = 2 + 2t.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    entity_types: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for TagSet {
    type Error = Error;

    fn try_from(types: Vec<String>) -> Result<Self> {
        TagSet::new(types)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.entity_types
    }
}

impl Default for TagSet {
    /// The 32-type scheme shipped in `data/entity_types.txt`.
    fn default() -> Self {
        TagSet::parse(DEFAULT_TYPES).expect("bundled entity type list is valid")
    }
}

impl TagSet {
    pub fn new<I, S>(types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = types.into_iter().map(Into::into).collect();
        if entity_types.is_empty() {
            return Err(Error::Config(
                "a tag set needs at least one entity type".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in entity_types.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid entity type name {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate entity type {t:?}")));
            }
        }
        Ok(TagSet {
            entity_types,
            index,
        })
    }

    /// One type per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        TagSet::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TagSet::parse(&text)
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn num_labels(&self) -> usize {
        1 + 2 * self.entity_types.len()
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.num_labels()).map(|i| self.label(i)).collect()
    }

    pub fn label(&self, id: usize) -> String {
        self.display(self.tag(id)).to_string()
    }

    pub fn tag(&self, id: usize) -> Tag {
        assert!(id < self.num_labels(), "label id {id} out of range");
        match id {
            0 => Tag::Outside,
            _ if id % 2 == 1 => Tag::Begin((id - 1) / 2),
            _ => Tag::Inside((id - 2) / 2),
        }
    }

    pub fn tag_id(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(t) => 1 + 2 * t,
            Tag::Inside(t) => 2 + 2 * t,
        }
    }

    pub fn parse_tag(&self, label: &str) -> Result<Tag> {
        let tag = match split_label(label) {
            Some(Lexical::Outside) => Tag::Outside,
            Some(Lexical::Begin(t)) => Tag::Begin(self.type_index(t, label)?),
            Some(Lexical::Inside(t)) => Tag::Inside(self.type_index(t, label)?),
            None => return Err(Error::UnknownLabel(label.into())),
        };
        Ok(tag)
    }

    pub fn id(&self, label: &str) -> Result<usize> {
        self.parse_tag(label).map(|t| self.tag_id(t))
    }

    fn type_index(&self, name: &str, label: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.into()))
    }

    pub fn display(&self, tag: Tag) -> impl fmt::Display + '_ {
        TagDisplay { set: self, tag }
    }
}

struct TagDisplay<'a> {
    set: &'a TagSet,
    tag: Tag,
}

impl fmt::Display for TagDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{}", self.set.entity_types[t]),
            Tag::Inside(t) => write!(f, "I-{}", self.set.entity_types[t]),
        }
    }
}

/// A label split into its IOB2 prefix and type name, without a tag set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Lexical<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Lexical<'a> {
    fn entity_type(self) -> Option<&'a str> {
        match self {
            Lexical::Outside => None,
            Lexical::Begin(t) | Lexical::Inside(t) => Some(t),
        }
    }
}

pub(crate) fn split_label(label: &str) -> Option<Lexical<'_>> {
    if label == "O" {
        return Some(Lexical::Outside);
    }
    let (prefix, name) = label.split_at_checked(2)?;
    if name.is_empty() {
        return None;
    }
    match prefix {
        "B-" => Some(Lexical::Begin(name)),
        "I-" => Some(Lexical::Inside(name)),
        _ => None,
    }
}

/// Index of the first label that breaks IOB2: `I-t` must follow `B-t` or `I-t`.
pub(crate) fn first_iob2_violation<'a>(
    labels: impl IntoIterator<Item = Lexical<'a>>,
) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, tag) in labels.into_iter().enumerate() {
        if let Lexical::Inside(t) = tag {
            if prev != Some(t) {
                return Some(i);
            }
        }
        prev = tag.entity_type();
    }
    None
}

pub fn is_valid_iob2(tags: &[Tag]) -> bool {
    let mut prev = None;
    for &tag in tags {
        if let Tag::Inside(t) = tag {
            if prev != Some(t) {
                return false;
            }
        }
        prev = tag.entity_type();
    }
    true
}

/// Rewrites every orphan `I-t` to `B-t`.
pub fn repair_iob2(tags: &mut [Tag]) {
    let mut prev = None;
    for tag in tags.iter_mut() {
        if let Tag::Inside(t) = *tag {
            if prev != Some(t) {
                *tag = Tag::Begin(t);
            }
        }
        prev = tag.entity_type();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scheme_has_65_contiguous_labels() {
        let ts = TagSet::default();
        assert_eq!(ts.entity_types().len(), 32);
        assert_eq!(ts.num_labels(), 65);
        assert_eq!(ts.label(0), "O");
        for (id, label) in ts.labels().iter().enumerate() {
            assert_eq!(ts.id(label).unwrap(), id);
        }
        assert_eq!(ts.id("B-Tel").unwrap() + 1, ts.id("I-Tel").unwrap());
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let ts = TagSet::default();
        for bad in ["B-Nope", "X-Tel", "B-", "", "o"] {
            assert!(matches!(ts.id(bad), Err(Error::UnknownLabel(_))), "{bad}");
        }
    }

    #[test]
    fn repair_turns_orphans_into_begins() {
        let mut tags = vec![
            Tag::Outside,
            Tag::Inside(3),
            Tag::Inside(3),
            Tag::Inside(1),
            Tag::Begin(1),
            Tag::Inside(1),
        ];
        assert!(!is_valid_iob2(&tags));
        repair_iob2(&mut tags);
        assert_eq!(
            tags,
            vec![
                Tag::Outside,
                Tag::Begin(3),
                Tag::Inside(3),
                Tag::Begin(1),
                Tag::Begin(1),
                Tag::Inside(1)
            ]
        );
        assert!(is_valid_iob2(&tags));
    }

    #[test]
    fn lexical_violation_index() {
        let labels = ["O", "B-a", "I-a", "I-b"].map(|l| split_label(l).unwrap());
        assert_eq!(first_iob2_violation(labels), Some(3));
        let labels = ["I-a"].map(|l| split_label(l).unwrap());
        assert_eq!(first_iob2_violation(labels), Some(0));
    }

    #[test]
    fn serde_round_trip_is_the_type_list() {
        let ts = TagSet::new(["A", "B"]).unwrap();
        let json = serde_json::to_string(&ts).unwrap();
        assert_eq!(json, r#"["A","B"]"#);
        assert_eq!(serde_json::from_str::<TagSet>(&json).unwrap(), ts);
        assert!(serde_json::from_str::<TagSet>(r#"["A","A"]"#).is_err());
    }
}
