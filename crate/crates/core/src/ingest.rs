//! Corpus loading, Latin-script filtering, per-country capped sampling and
//! deterministic splits.
//!
//! Two on-disk record formats are accepted:
//!
//! * JSON Lines: `{"id": str?, "address": str, "tags": [str], "country": str?}`
//! * TSV: `id \t country \t address \t space-joined tags`
//!
//! Tags may be given as base tags (`StreetName`) or BIO labels
//! (`B-StreetName`); base tags are converted with [`to_bio`]. A missing id
//! becomes `<source>:<line>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::schema::{to_bio, validate_bio, BaseTag, BioLabel, Sample};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, provenance: impl Into<String>) -> Self {
        Corpus { samples, provenance: provenance.into() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    fn subset(&self, keep: impl Fn(usize) -> bool, provenance: String) -> Corpus {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, s)| s.clone())
            .collect();
        Corpus { samples, provenance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// Guesses from the file extension, defaulting to JSON Lines.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Country assigned to records that carry none.
    pub default_country: Option<String>,
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<String>,
    address: String,
    tags: Vec<String>,
    country: Option<String>,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: &'a str,
    address: String,
    tags: &'a [BioLabel],
    #[serde(skip_serializing_if = "Option::is_none")]
    country: Option<&'a str>,
}

struct RecordCtx<'a> {
    source_name: &'a str,
    line: usize,
}

impl RecordCtx<'_> {
    fn malformed(&self, reason: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            source_name: self.source_name.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }
}

fn parse_tags(ctx: &RecordCtx<'_>, tags: &[&str]) -> Result<Vec<BioLabel>, IngestError> {
    let as_base: Option<Vec<BaseTag>> = tags.iter().map(|t| t.parse().ok()).collect();
    if let Some(base) = as_base {
        return Ok(to_bio(&base));
    }
    let labels = tags
        .iter()
        .map(|t| {
            t.parse::<BioLabel>().map_err(|_| IngestError::UnknownTag {
                source_name: ctx.source_name.to_string(),
                line: ctx.line,
                tag: t.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(v) = validate_bio(&labels).into_iter().next() {
        return Err(ctx.malformed(format!("invalid BIO sequence: {v}")));
    }
    Ok(labels)
}

fn normalize_country(ctx: &RecordCtx<'_>, raw: &str) -> Result<String, IngestError> {
    let code = raw.trim().to_ascii_lowercase();
    if code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase()) {
        Ok(code)
    } else {
        Err(ctx.malformed(format!("country {raw:?} is not an ISO alpha-2 code")))
    }
}

fn build_sample(
    ctx: &RecordCtx<'_>,
    id: Option<&str>,
    address: &str,
    tags: &[&str],
    country: Option<&str>,
    opts: &LoadOptions,
) -> Result<Sample, IngestError> {
    let words: Vec<String> = address.split_whitespace().map(String::from).collect();
    if words.is_empty() {
        return Err(ctx.malformed("empty address"));
    }
    if words.len() != tags.len() {
        return Err(ctx.malformed(format!("{} words but {} tags", words.len(), tags.len())));
    }
    let labels = parse_tags(ctx, tags)?;
    let country = match country.filter(|c| !c.trim().is_empty()).or(opts.default_country.as_deref()) {
        Some(c) => Some(normalize_country(ctx, c)?),
        None => None,
    };
    let id = match id.filter(|s| !s.is_empty()) {
        Some(id) => id.to_string(),
        None => format!("{}:{}", ctx.source_name, ctx.line),
    };
    Ok(Sample { id, words, labels, country })
}

/// Parses one JSON Lines record. Blank lines yield `Ok(None)`.
pub fn parse_jsonl_record(
    line: &str,
    source_name: &str,
    line_no: usize,
    opts: &LoadOptions,
) -> Result<Option<Sample>, IngestError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let ctx = RecordCtx { source_name, line: line_no };
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| ctx.malformed(e.to_string()))?;
    let tags: Vec<&str> = rec.tags.iter().map(String::as_str).collect();
    build_sample(&ctx, rec.id.as_deref(), &rec.address, &tags, rec.country.as_deref(), opts).map(Some)
}

/// Parses one TSV record. Blank lines and a leading `id\tcountry\t...`
/// header yield `Ok(None)`.
pub fn parse_tsv_record(
    line: &str,
    source_name: &str,
    line_no: usize,
    opts: &LoadOptions,
) -> Result<Option<Sample>, IngestError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || (line_no == 1 && line.starts_with("id\tcountry\t")) {
        return Ok(None);
    }
    let ctx = RecordCtx { source_name, line: line_no };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(ctx.malformed(format!("expected 4 tab-separated columns, found {}", cols.len())));
    }
    let tags: Vec<&str> = cols[3].split_whitespace().collect();
    build_sample(&ctx, Some(cols[0]), cols[2], &tags, Some(cols[1]), opts).map(Some)
}

pub fn read_corpus<R: BufRead>(
    reader: R,
    format: Format,
    source_name: &str,
    opts: &LoadOptions,
) -> Result<Corpus, IngestError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io { path: source_name.to_string(), source })?;
        let parsed = match format {
            Format::Jsonl => parse_jsonl_record(&line, source_name, i + 1, opts)?,
            Format::Tsv => parse_tsv_record(&line, source_name, i + 1, opts)?,
        };
        samples.extend(parsed);
    }
    Ok(Corpus::new(samples, source_name))
}

pub fn load_corpus(path: &Path, format: Format, opts: &LoadOptions) -> Result<Corpus, IngestError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Io { path: name.clone(), source })?;
    read_corpus(BufReader::new(file), format, &name, opts)
}

/// Renders a sample as one JSON Lines record with BIO tag strings.
pub fn sample_to_json(sample: &Sample) -> String {
    let rec = JsonRecordOut {
        id: &sample.id,
        address: sample.address(),
        tags: &sample.labels,
        country: sample.country.as_deref(),
    };
    serde_json::to_string(&rec).expect("sample record serializes")
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for s in &corpus.samples {
        writeln!(out, "{}", sample_to_json(s))?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), IngestError> {
    let io = |source| IngestError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io)?;
    write_corpus(corpus, std::io::BufWriter::new(file)).map_err(io)
}

fn is_latin_letter(c: char) -> bool {
    matches!(c as u32,
        0x41..=0x5A | 0x61..=0x7A
        | 0xAA | 0xBA
        | 0xC0..=0xD6 | 0xD8..=0xF6 | 0xF8..=0x24F
        | 0x250..=0x2AF
        | 0x1D00..=0x1D7F
        | 0x1E00..=0x1EFF
        | 0x2C60..=0x2C7F
        | 0xA720..=0xA7FF
        | 0xAB30..=0xAB6F
        | 0xFB00..=0xFB06
        | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
}

/// True when every alphabetic character is Latin script; digits, punctuation,
/// whitespace and combining marks are neutral.
pub fn is_latin(address: &str) -> bool {
    address
        .chars()
        .filter(|c| c.is_alphabetic() && !matches!(*c as u32, 0x300..=0x36F))
        .all(is_latin_letter)
}

/// Drops samples containing non-Latin letters; returns the kept corpus and
/// the number removed.
pub fn filter_latin(corpus: &Corpus) -> (Corpus, usize) {
    let keep: Vec<bool> = corpus.samples.iter().map(|s| is_latin(&s.address())).collect();
    let removed = keep.iter().filter(|k| !**k).count();
    (corpus.subset(|i| keep[i], corpus.provenance.clone()), removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub per_country_cap: usize,
    pub test_size: usize,
    pub zero_shot_countries: BTreeSet<String>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            per_country_cap: 100_000,
            test_size: 100_000,
            zero_shot_countries: BTreeSet::new(),
            seed: 42,
        }
    }
}

fn country_of(sample: &Sample) -> Result<&str, IngestError> {
    sample
        .country
        .as_deref()
        .ok_or_else(|| IngestError::MissingCountry { id: sample.id.clone() })
}

/// Keeps at most `per_country_cap` samples per country, chosen uniformly
/// without replacement. Output preserves input order.
pub fn sample_capped(corpus: &Corpus, spec: &SplitSpec) -> Result<Corpus, IngestError> {
    let mut by_country: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        by_country.entry(country_of(s)?).or_default().push(i);
    }
    let mut keep = vec![false; corpus.len()];
    for (country, idx) in by_country {
        if idx.len() <= spec.per_country_cap {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            let mut rng = seed::stream(spec.seed, &format!("cap:{country}"));
            for j in index::sample(&mut rng, idx.len(), spec.per_country_cap) {
                keep[idx[j]] = true;
            }
        }
    }
    Ok(corpus.subset(|i| keep[i], format!("{} (capped {})", corpus.provenance, spec.per_country_cap)))
}

/// Separates samples whose country is in `zero_shot_countries`.
pub fn split_zero_shot(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), IngestError> {
    let mut zero = vec![false; corpus.len()];
    for (i, s) in corpus.samples.iter().enumerate() {
        zero[i] = spec.zero_shot_countries.contains(country_of(s)?);
    }
    Ok((
        corpus.subset(|i| !zero[i], corpus.provenance.clone()),
        corpus.subset(|i| zero[i], format!("{} (zero-shot)", corpus.provenance)),
    ))
}

/// Draws `test_size` samples for testing; the rest train. Both keep input order.
pub fn split_train_test(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), IngestError> {
    if spec.test_size > corpus.len() {
        return Err(IngestError::TestSizeTooLarge {
            requested: spec.test_size,
            available: corpus.len(),
        });
    }
    let mut rng = seed::stream(spec.seed, "train-test");
    let mut is_test = vec![false; corpus.len()];
    for i in index::sample(&mut rng, corpus.len(), spec.test_size) {
        is_test[i] = true;
    }
    Ok((
        corpus.subset(|i| !is_test[i], format!("{} (train)", corpus.provenance)),
        corpus.subset(|i| is_test[i], format!("{} (test)", corpus.provenance)),
    ))
}

/// `n` samples drawn uniformly without replacement, kept in input order.
/// Asking for more than the corpus holds returns all of it.
pub fn sample_n(corpus: &Corpus, n: usize, seed: u64) -> Corpus {
    if n >= corpus.len() {
        return corpus.clone();
    }
    let mut rng = seed::stream(seed, "sample-n");
    let mut keep = vec![false; corpus.len()];
    for i in index::sample(&mut rng, corpus.len(), n) {
        keep[i] = true;
    }
    corpus.subset(|i| keep[i], format!("{} (sample of {n})", corpus.provenance))
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Corpus,
    pub validation: Corpus,
}

/// Shuffles once, then cuts `k` contiguous validation parts whose sizes
/// differ by at most one.
pub fn kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Fold>, IngestError> {
    if k < 2 {
        return Err(IngestError::InvalidK(k));
    }
    let n = corpus.len();
    if k > n {
        return Err(IngestError::KTooLarge { k, n });
    }
    let mut rng = seed::stream(seed, "kfold");
    let order = index::sample(&mut rng, n, n).into_vec();
    let mut fold_of = vec![0usize; n];
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &order[start..start + size] {
            fold_of[i] = f;
        }
        start += size;
    }
    Ok((0..k)
        .map(|f| Fold {
            train: corpus.subset(|i| fold_of[i] != f, format!("{} (fold {f} train)", corpus.provenance)),
            validation: corpus.subset(|i| fold_of[i] == f, format!("{} (fold {f} validation)", corpus.provenance)),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub test: Corpus,
    pub zero_shot: Corpus,
    pub non_latin_removed: usize,
}

/// Latin filter, zero-shot separation, per-country cap, then train/test split.
pub fn prepare_splits(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits, IngestError> {
    let (latin, non_latin_removed) = filter_latin(corpus);
    let (main, zero) = split_zero_shot(&latin, spec)?;
    let main = sample_capped(&main, spec)?;
    let zero_shot = sample_capped(&zero, spec)?;
    let (train, test) = split_train_test(&main, spec)?;
    Ok(Splits { train, test, zero_shot, non_latin_removed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::BaseTag::*;
    use std::collections::HashSet;

    const REFERENCE_RECORD: &str = r#"{"address":"jakob-sturm-w. 35 80995 munich bavaria","tags":["StreetName","StreetNumber","PostalCode","Municipality","Province"],"country":"de"}"#;

    fn opts() -> LoadOptions {
        LoadOptions::default()
    }

    fn toy(n_per: &[(&str, usize)]) -> Corpus {
        let mut samples = Vec::new();
        for (c, n) in n_per {
            for i in 0..*n {
                samples.push(
                    Sample::from_base(
                        format!("{c}-{i}"),
                        vec![format!("w{i}")],
                        &[Municipality],
                        Some(c.to_string()),
                    )
                    .unwrap(),
                );
            }
        }
        Corpus::new(samples, "toy")
    }

    #[test]
    fn parses_reference_record() {
        let s = parse_jsonl_record(REFERENCE_RECORD, "f.jsonl", 3, &opts()).unwrap().unwrap();
        assert_eq!(s.words.len(), 5);
        assert_eq!(s.id, "f.jsonl:3");
        assert_eq!(s.country.as_deref(), Some("de"));
        assert_eq!(s.base_tags(), vec![StreetName, StreetNumber, PostalCode, Municipality, Province]);
    }

    #[test]
    fn rejects_length_mismatch_with_line_number() {
        let line = r#"{"address":"a b c d e","tags":["Name","Name","Name","Name"]}"#;
        let err = parse_jsonl_record(line, "f.jsonl", 7, &opts()).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 7, .. }), "{err}");
        assert!(err.to_string().starts_with("f.jsonl:7"));
    }

    #[test]
    fn rejects_unknown_tag() {
        let line = r#"{"address":"a","tags":["Street"]}"#;
        let err = parse_jsonl_record(line, "f", 1, &opts()).unwrap_err();
        assert!(matches!(err, IngestError::UnknownTag { ref tag, .. } if tag == "Street"));
    }

    #[test]
    fn accepts_bio_tags_and_rejects_invalid_bio() {
        let ok = r#"{"id":"x","address":"a b","tags":["B-Name","I-Name"]}"#;
        assert_eq!(parse_jsonl_record(ok, "f", 1, &opts()).unwrap().unwrap().id, "x");
        let bad = r#"{"address":"a b","tags":["I-Name","I-Name"]}"#;
        assert!(parse_jsonl_record(bad, "f", 1, &opts()).is_err());
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = read_corpus(&b""[..], Format::Jsonl, "empty", &opts()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn tsv_and_default_country() {
        let data = "id\tcountry\taddress\ttags\nr1\t\tmain st\tStreetName StreetName\n";
        let o = LoadOptions { default_country: Some("US".into()) };
        let c = read_corpus(data.as_bytes(), Format::Tsv, "t.tsv", &o).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.samples[0].country.as_deref(), Some("us"));
        assert_eq!(c.samples[0].labels[1], BioLabel::inside(StreetName));
    }

    #[test]
    fn json_output_reparses() {
        let s = parse_jsonl_record(REFERENCE_RECORD, "f", 1, &opts()).unwrap().unwrap();
        let again = parse_jsonl_record(&sample_to_json(&s), "g", 1, &opts()).unwrap().unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn latin_filter() {
        assert!(is_latin("jakob-sturm-w. 35"));
        assert!(!is_latin("Мюнхен 80995"));
        assert!(is_latin("80995 ---"));
        assert!(is_latin("straße münchen čačak"));
        assert!(!is_latin("東京 1"));
    }

    #[test]
    fn capped_sampling_census() {
        let c = toy(&[("aa", 150), ("bb", 80), ("cc", 200)]);
        let spec = SplitSpec { per_country_cap: 100, ..Default::default() };
        let out = sample_capped(&c, &spec).unwrap();
        let mut census: BTreeMap<String, usize> = BTreeMap::new();
        for s in &out.samples {
            *census.entry(s.country.clone().unwrap()).or_default() += 1;
        }
        assert_eq!(census["aa"], 100);
        assert_eq!(census["bb"], 80);
        assert_eq!(census["cc"], 100);
        assert_eq!(out.len(), 280);
        let unique: HashSet<_> = out.ids().collect();
        assert_eq!(unique.len(), 280);
        let again = sample_capped(&c, &spec).unwrap();
        assert_eq!(out, again);
        let zero = sample_capped(&c, &SplitSpec { per_country_cap: 0, ..Default::default() }).unwrap();
        assert!(zero.is_empty());
    }

    #[test]
    fn capped_sampling_needs_country() {
        let s = Sample::from_base("x", vec!["a".into()], &[Name], None).unwrap();
        let err = sample_capped(&Corpus::new(vec![s], "t"), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingCountry { .. }));
    }

    #[test]
    fn train_test_split_is_disjoint_partition() {
        let c = toy(&[("aa", 150), ("bb", 80), ("cc", 200)]);
        let spec = SplitSpec { test_size: 100, ..Default::default() };
        let (train, test) = split_train_test(&c, &spec).unwrap();
        assert_eq!((train.len(), test.len()), (330, 100));
        let tr: HashSet<_> = train.ids().collect();
        assert!(test.ids().all(|id| !tr.contains(id)));

        let (_, test2) = split_train_test(&c, &SplitSpec { seed: 1, ..spec.clone() }).unwrap();
        assert_eq!(test2.len(), 100);
        assert_ne!(test.ids().collect::<Vec<_>>(), test2.ids().collect::<Vec<_>>());

        let all = SplitSpec { test_size: c.len(), ..spec.clone() };
        assert!(split_train_test(&c, &all).unwrap().0.is_empty());
        let too_many = SplitSpec { test_size: c.len() + 1, ..spec };
        assert!(matches!(split_train_test(&c, &too_many), Err(IngestError::TestSizeTooLarge { .. })));
    }

    #[test]
    fn kfold_partitions() {
        let c = toy(&[("aa", 8)]);
        let folds = kfold(&c, 4, 42).unwrap();
        assert_eq!(folds.len(), 4);
        let mut seen = Vec::new();
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.train.len(), 6);
            seen.extend(f.validation.ids().map(String::from));
        }
        seen.sort();
        let mut all: Vec<String> = c.ids().map(String::from).collect();
        all.sort();
        assert_eq!(seen, all);

        let two = kfold(&toy(&[("aa", 2)]), 2, 1).unwrap();
        assert!(two.iter().all(|f| f.validation.len() == 1));
        assert!(matches!(kfold(&c, 9, 1), Err(IngestError::KTooLarge { .. })));
        assert!(matches!(kfold(&c, 1, 1), Err(IngestError::InvalidK(1))));
    }

    #[test]
    fn kfold_sizes_differ_by_at_most_one() {
        let c = toy(&[("aa", 11)]);
        let sizes: Vec<usize> = kfold(&c, 4, 3).unwrap().iter().map(|f| f.validation.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 11);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn prepare_splits_separates_zero_shot() {
        let c = toy(&[("aa", 30), ("bb", 30), ("zz", 30)]);
        let spec = SplitSpec {
            per_country_cap: 20,
            test_size: 10,
            zero_shot_countries: ["zz".to_string()].into(),
            seed: 5,
        };
        let s = prepare_splits(&c, &spec).unwrap();
        assert_eq!(s.zero_shot.len(), 20);
        assert_eq!(s.train.len() + s.test.len(), 40);
        assert!(s.train.samples.iter().all(|x| x.country.as_deref() != Some("zz")));
    }
}
