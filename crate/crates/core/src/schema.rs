//! Tag taxonomy, BIO labels and the labeled [`Sample`] record shared by the
//! rest of the crate.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::SchemaError;

/// Field tag of a single address word, before BIO positional prefixes.
///
/// Spellings are case-sensitive and used verbatim in every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseTag {
    Name,
    StreetNumber,
    StreetName,
    Unit,
    PostalCode,
    Municipality,
    Province,
    Country,
    CountryCode,
    HardSep,
    /// Out-of-address content (reference numbers, codes, redundant terms).
    Ooa,
}

impl BaseTag {
    pub const ALL: [BaseTag; 11] = [
        BaseTag::Name,
        BaseTag::StreetNumber,
        BaseTag::StreetName,
        BaseTag::Unit,
        BaseTag::PostalCode,
        BaseTag::Municipality,
        BaseTag::Province,
        BaseTag::Country,
        BaseTag::CountryCode,
        BaseTag::HardSep,
        BaseTag::Ooa,
    ];

    /// The six tags carried by clean (V0/V1) data.
    pub const ORIGINAL: [BaseTag; 6] = [
        BaseTag::StreetName,
        BaseTag::StreetNumber,
        BaseTag::Unit,
        BaseTag::PostalCode,
        BaseTag::Municipality,
        BaseTag::Province,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseTag::Name => "Name",
            BaseTag::StreetNumber => "StreetNumber",
            BaseTag::StreetName => "StreetName",
            BaseTag::Unit => "Unit",
            BaseTag::PostalCode => "PostalCode",
            BaseTag::Municipality => "Municipality",
            BaseTag::Province => "Province",
            BaseTag::Country => "Country",
            BaseTag::CountryCode => "CountryCode",
            BaseTag::HardSep => "HardSep",
            BaseTag::Ooa => "OOA",
        }
    }

    pub fn is_original(self) -> bool {
        Self::ORIGINAL.contains(&self)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseTag {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaseTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prefix {
    B,
    I,
}

/// A base tag with its positional prefix, rendered `B-<tag>` / `I-<tag>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BioLabel {
    pub prefix: Prefix,
    pub base: BaseTag,
}

impl BioLabel {
    pub const COUNT: usize = 2 * BaseTag::ALL.len();

    pub const fn begin(base: BaseTag) -> Self {
        BioLabel { prefix: Prefix::B, base }
    }

    pub const fn inside(base: BaseTag) -> Self {
        BioLabel { prefix: Prefix::I, base }
    }

    pub fn is_begin(self) -> bool {
        self.prefix == Prefix::B
    }

    /// All 22 labels, B- before I- for each base tag.
    pub fn all() -> impl Iterator<Item = BioLabel> {
        BaseTag::ALL
            .into_iter()
            .flat_map(|b| [BioLabel::begin(b), BioLabel::inside(b)])
    }

    /// Dense index in `0..COUNT`, matching the order of [`BioLabel::all`].
    pub fn index(self) -> usize {
        2 * self.base.index() + usize::from(self.prefix == Prefix::I)
    }

    pub fn from_index(index: usize) -> Option<BioLabel> {
        let base = *BaseTag::ALL.get(index / 2)?;
        Some(if index.is_multiple_of(2) {
            BioLabel::begin(base)
        } else {
            BioLabel::inside(base)
        })
    }

    /// Whether this label may directly follow `prev` (`None` = sequence start).
    pub fn can_follow(self, prev: Option<BioLabel>) -> bool {
        match self.prefix {
            Prefix::B => true,
            Prefix::I => prev.is_some_and(|p| p.base == self.base),
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.prefix {
            Prefix::B => "B-",
            Prefix::I => "I-",
        };
        write!(f, "{p}{}", self.base)
    }
}

impl FromStr for BioLabel {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, rest) = if let Some(rest) = s.strip_prefix("B-") {
            (Prefix::B, rest)
        } else if let Some(rest) = s.strip_prefix("I-") {
            (Prefix::I, rest)
        } else {
            return Err(SchemaError::UnknownTag(s.to_string()));
        };
        let base = rest
            .parse::<BaseTag>()
            .map_err(|_| SchemaError::UnknownTag(s.to_string()))?;
        Ok(BioLabel { prefix, base })
    }
}

impl Serialize for BioLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for BaseTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BaseTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The first label of each maximal run of equal base tags becomes `B-`, the
/// rest `I-`.
pub fn to_bio(tags: &[BaseTag]) -> Vec<BioLabel> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<BaseTag> = None;
    for &tag in tags {
        out.push(if prev == Some(tag) {
            BioLabel::inside(tag)
        } else {
            BioLabel::begin(tag)
        });
        prev = Some(tag);
    }
    out
}

pub fn strip_prefix(labels: &[BioLabel]) -> Vec<BaseTag> {
    labels.iter().map(|l| l.base).collect()
}

/// An `I-` label without a same-base predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioViolation {
    pub index: usize,
    pub label: BioLabel,
    pub previous: Option<BioLabel>,
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.previous {
            Some(p) => write!(f, "{} at index {} follows {}", self.label, self.index, p),
            None => write!(f, "{} at index {} starts the sequence", self.label, self.index),
        }
    }
}

pub fn validate_bio(labels: &[BioLabel]) -> Vec<BioViolation> {
    let mut prev = None;
    let mut violations = Vec::new();
    for (index, &label) in labels.iter().enumerate() {
        if !label.can_follow(prev) {
            violations.push(BioViolation { index, label, previous: prev });
        }
        prev = Some(label);
    }
    violations
}

/// A contiguous span of words sharing one field tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub tag: BaseTag,
    pub span: Range<usize>,
}

/// Splits a valid label sequence into fields, one per `B-` label.
pub fn fields(labels: &[BioLabel]) -> Vec<Field> {
    let mut out: Vec<Field> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(f) if !label.is_begin() && f.tag == label.base => f.span.end = i + 1,
            _ => out.push(Field { tag: label.base, span: i..i + 1 }),
        }
    }
    out
}

/// A tokenized address with one BIO label per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub words: Vec<String>,
    pub labels: Vec<BioLabel>,
    /// Lowercase ISO 3166 alpha-2 code.
    pub country: Option<String>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        words: Vec<String>,
        labels: Vec<BioLabel>,
        country: Option<String>,
    ) -> Result<Self, SchemaError> {
        let sample = Sample {
            id: id.into(),
            words,
            labels,
            country: country.map(|c| c.to_ascii_lowercase()),
        };
        sample.check()?;
        Ok(sample)
    }

    /// Builds a sample from base tags, deriving BIO labels with [`to_bio`].
    pub fn from_base(
        id: impl Into<String>,
        words: Vec<String>,
        tags: &[BaseTag],
        country: Option<String>,
    ) -> Result<Self, SchemaError> {
        Sample::new(id, words, to_bio(tags), country)
    }

    pub fn check(&self) -> Result<(), SchemaError> {
        if self.words.len() != self.labels.len() {
            return Err(SchemaError::LengthMismatch {
                words: self.words.len(),
                labels: self.labels.len(),
            });
        }
        if let Some(w) = self
            .words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(SchemaError::BadWord(w.clone()));
        }
        if let Some(v) = validate_bio(&self.labels).into_iter().next() {
            return Err(SchemaError::InvalidBio(v.to_string()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn fields(&self) -> Vec<Field> {
        fields(&self.labels)
    }

    pub fn field_words(&self, field: &Field) -> &[String] {
        &self.words[field.span.clone()]
    }

    pub fn address(&self) -> String {
        self.words.join(" ")
    }

    pub fn base_tags(&self) -> Vec<BaseTag> {
        strip_prefix(&self.labels)
    }
}
