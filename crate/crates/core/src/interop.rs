//! LibPostal tag mapping and import of external parser predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::InteropError;
use crate::ingest::Corpus;
use crate::schema::{to_bio, BaseTag, BioLabel};

/// Which dataset generation the mapping targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagVersion {
    V0V1,
    V2,
}

impl FromStr for TagVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v0v1" | "v0" | "v1" => Ok(TagVersion::V0V1),
            "v2" => Ok(TagVersion::V2),
            _ => Err(format!("unknown tag version {s:?} (expected v0v1 or v2)")),
        }
    }
}

impl fmt::Display for TagVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagVersion::V0V1 => "v0v1",
            TagVersion::V2 => "v2",
        })
    }
}

use BaseTag::*;

/// `(external tag, V0/V1 mapping, V2 mapping)`.
pub const LIBPOSTAL_MAP: [(&str, BaseTag, BaseTag); 20] = [
    ("house_number", StreetNumber, StreetNumber),
    ("road", StreetName, StreetName),
    ("house", Unit, Name),
    ("level", Unit, Unit),
    ("city", Municipality, Municipality),
    ("state", Province, Province),
    ("state_district", Province, Province),
    ("unit", Unit, Unit),
    ("postcode", PostalCode, PostalCode),
    ("country", Province, Country),
    ("suburb", Municipality, Municipality),
    ("city_district", Municipality, Municipality),
    ("category", StreetName, Ooa),
    ("near", Municipality, Ooa),
    ("po_box", PostalCode, Ooa),
    ("entrance", Unit, Ooa),
    ("country_region", Province, Country),
    ("staircase", Unit, Ooa),
    ("world_region", Province, Province),
    ("island", Province, Ooa),
];

pub fn map_external(tag: &str, version: TagVersion) -> Result<BaseTag, InteropError> {
    LIBPOSTAL_MAP
        .iter()
        .find(|(t, _, _)| *t == tag)
        .map(|(_, old, new)| match version {
            TagVersion::V0V1 => *old,
            TagVersion::V2 => *new,
        })
        .ok_or_else(|| InteropError::UnknownExternalTag(tag.to_string()))
}

/// Maps a per-word external tag sequence to BIO labels. Adjacent words with
/// the same mapped tag merge into one field.
pub fn map_sequence<S: AsRef<str>>(tags: &[S], version: TagVersion) -> Result<Vec<BioLabel>, InteropError> {
    let base = tags.iter().map(|t| map_external(t.as_ref(), version)).collect::<Result<Vec<_>, _>>()?;
    Ok(to_bio(&base))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    id: String,
    tags: Vec<String>,
}

/// Parses one `{"id": ..., "tags": [...]}` line. Blank lines give `None`.
pub fn parse_prediction_line(
    line: &str,
    source_name: &str,
    line_no: usize,
    version: TagVersion,
) -> Result<Option<(String, Vec<BioLabel>)>, InteropError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| InteropError::Malformed {
        source_name: source_name.into(),
        line: line_no,
        reason: e.to_string(),
    })?;
    Ok(Some((rec.id, map_sequence(&rec.tags, version)?)))
}

/// Reads external predictions keyed by sample id. With `gold`, every id must
/// exist there and have the same word count.
pub fn import_predictions<R: BufRead>(
    reader: R,
    source_name: &str,
    version: TagVersion,
    gold: Option<&Corpus>,
) -> Result<BTreeMap<String, Vec<BioLabel>>, InteropError> {
    let gold_len: Option<BTreeMap<&str, usize>> =
        gold.map(|c| c.samples.iter().map(|s| (s.id.as_str(), s.len())).collect());
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let malformed = |reason: String| InteropError::Malformed { source_name: source_name.into(), line: i + 1, reason };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        let Some((id, labels)) = parse_prediction_line(&line, source_name, i + 1, version)? else {
            continue;
        };
        if let Some(lens) = &gold_len {
            let &n = lens.get(id.as_str()).ok_or_else(|| malformed(format!("sample {id:?} is not in the gold corpus")))?;
            if n != labels.len() {
                return Err(InteropError::LengthMismatch { id, gold: n, pred: labels.len() });
            }
        }
        if out.contains_key(&id) {
            return Err(malformed(format!("duplicate sample id {id:?}")));
        }
        out.insert(id, labels);
    }
    Ok(out)
}

pub fn load_predictions(
    path: &Path,
    version: TagVersion,
    gold: Option<&Corpus>,
) -> Result<BTreeMap<String, Vec<BioLabel>>, InteropError> {
    let file = fs::File::open(path).map_err(|source| InteropError::Io { path: path.display().to_string(), source })?;
    import_predictions(std::io::BufReader::new(file), &path.display().to_string(), version, gold)
}
