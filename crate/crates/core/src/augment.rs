//! Noise augmentation: synthetic names, localized countries, structure
//! masks, line separators and out-of-address terms, and the V0/V1/V2
//! dataset builders that combine them.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::AugmentError;
use crate::ingest::Corpus;
use crate::schema::{BaseTag, BioLabel, Sample};
use crate::seed;

/// Masks tried per sample before it is passed through unmodified.
pub const MAX_MASK_DRAWS: usize = 8;

pub const HARDSEP_TOKEN: &str = "$";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountryForm {
    FullName,
    IsoCode,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Language {
    En,
    Fr,
    De,
    It,
    Native,
}

impl Language {
    const ALL: [Language; 5] = [Language::En, Language::Fr, Language::De, Language::It, Language::Native];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OoaKind {
    RandomNumber,
    AlphanumericCode,
    Postbox,
    DuplicateTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NameKind {
    Person,
    Company,
}

/// A finite probability distribution keyed by an enum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Categorical<K: Ord>(pub BTreeMap<K, f64>);

impl<K: Ord + Copy> Categorical<K> {
    pub fn uniform(keys: &[K]) -> Self {
        let p = 1.0 / keys.len() as f64;
        Categorical(keys.iter().map(|&k| (k, p)).collect())
    }

    pub fn certain(key: K) -> Self {
        Categorical([(key, 1.0)].into_iter().collect())
    }

    fn validate(&self, name: &str) -> Result<(), AugmentError> {
        if self.0.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(AugmentError::InvalidConfig(format!("{name}: probabilities must be finite and non-negative")));
        }
        let total: f64 = self.0.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AugmentError::InvalidConfig(format!("{name}: probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> K {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for (&k, &p) in &self.0 {
            acc += p;
            if p > 0.0 {
                last = Some(k);
                if u < acc {
                    return k;
                }
            }
        }
        last.expect("validated distribution has positive mass")
    }
}

/// Sampling distributions for the augmentation steps. The shipped defaults
/// are uniform placeholders; measured production frequencies belong in a
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub country_form_dist: Categorical<CountryForm>,
    pub country_language_dist: Categorical<Language>,
    pub ooa_kind_dist: Categorical<OoaKind>,
    pub hardsep_fraction: f64,
    pub name_kind_dist: Categorical<NameKind>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            country_form_dist: Categorical::uniform(&[CountryForm::FullName, CountryForm::IsoCode, CountryForm::Absent]),
            country_language_dist: Categorical::uniform(&Language::ALL),
            ooa_kind_dist: Categorical::uniform(&[
                OoaKind::RandomNumber,
                OoaKind::AlphanumericCode,
                OoaKind::Postbox,
                OoaKind::DuplicateTerm,
            ]),
            hardsep_fraction: 1.0 / 3.0,
            name_kind_dist: Categorical::uniform(&[NameKind::Person, NameKind::Company]),
            seed: 42,
        }
    }
}

fn parse_key<K: for<'de> Deserialize<'de>>(key: &str) -> Result<K, AugmentError> {
    serde_json::from_value(serde_json::Value::String(key.to_string()))
        .map_err(|_| AugmentError::InvalidConfig(format!("unknown distribution entry {key:?}")))
}

fn parse_prob(value: &str) -> Result<f64, AugmentError> {
    value
        .parse()
        .map_err(|_| AugmentError::InvalidConfig(format!("{value:?} is not a number")))
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        self.country_form_dist.validate("country_form_dist")?;
        self.country_language_dist.validate("country_language_dist")?;
        self.ooa_kind_dist.validate("ooa_kind_dist")?;
        self.name_kind_dist.validate("name_kind_dist")?;
        if !(0.0..=1.0).contains(&self.hardsep_fraction) {
            return Err(AugmentError::InvalidConfig(format!(
                "hardsep_fraction {} outside [0, 1]",
                self.hardsep_fraction
            )));
        }
        Ok(())
    }

    /// Parses a TOML config; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, AugmentError> {
        let cfg: NoiseConfig = toml::from_str(text).map_err(|e| AugmentError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("noise config serializes")
    }

    /// Applies one `key=value` override, e.g. `hardsep_fraction=0.5` or
    /// `ooa_kind_dist.postbox=0.25`. Call [`NoiseConfig::validate`] after the
    /// last override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), AugmentError> {
        match key.split_once('.') {
            None => match key {
                "hardsep_fraction" => self.hardsep_fraction = parse_prob(value)?,
                "seed" => {
                    self.seed = value
                        .parse()
                        .map_err(|_| AugmentError::InvalidConfig(format!("seed {value:?} is not an integer")))?
                }
                _ => return Err(AugmentError::InvalidConfig(format!("unknown key {key:?}"))),
            },
            Some((dist, entry)) => {
                let p = parse_prob(value)?;
                match dist {
                    "country_form_dist" => {
                        self.country_form_dist.0.insert(parse_key(entry)?, p);
                    }
                    "country_language_dist" => {
                        self.country_language_dist.0.insert(parse_key(entry)?, p);
                    }
                    "ooa_kind_dist" => {
                        self.ooa_kind_dist.0.insert(parse_key(entry)?, p);
                    }
                    "name_kind_dist" => {
                        self.name_kind_dist.0.insert(parse_key(entry)?, p);
                    }
                    _ => return Err(AugmentError::InvalidConfig(format!("unknown key {key:?}"))),
                }
            }
        }
        Ok(())
    }
}

fn word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// Word lists for fake person and company names.
#[derive(Debug, Clone)]
pub struct NameCorpora {
    pub given_names: Vec<String>,
    pub surnames: Vec<String>,
    pub company_stems: Vec<String>,
    pub company_suffixes: Vec<String>,
}

impl NameCorpora {
    pub fn bundled() -> Self {
        NameCorpora {
            given_names: word_list(include_str!("../data/given_names.txt")),
            surnames: word_list(include_str!("../data/surnames.txt")),
            company_stems: word_list(include_str!("../data/company_stems.txt")),
            company_suffixes: word_list(include_str!("../data/company_suffixes.txt")),
        }
    }

    /// Loads `given_names.txt`, `surnames.txt`, `company_stems.txt` and
    /// `company_suffixes.txt` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, AugmentError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path)
                .map(|t| word_list(&t))
                .map_err(|source| AugmentError::Io { path: path.display().to_string(), source })
        };
        let corpora = NameCorpora {
            given_names: read("given_names.txt")?,
            surnames: read("surnames.txt")?,
            company_stems: read("company_stems.txt")?,
            company_suffixes: read("company_suffixes.txt")?,
        };
        corpora.validate()?;
        Ok(corpora)
    }

    fn validate(&self) -> Result<(), AugmentError> {
        for (name, list) in [
            ("given_names", &self.given_names),
            ("surnames", &self.surnames),
            ("company_stems", &self.company_stems),
            ("company_suffixes", &self.company_suffixes),
        ] {
            if list.is_empty() {
                return Err(AugmentError::InvalidConfig(format!("{name} list is empty")));
            }
            if let Some(bad) = list.iter().find(|w| !crate::ingest::is_latin(w)) {
                return Err(AugmentError::InvalidConfig(format!("{name} entry {bad:?} is not Latin script")));
            }
        }
        Ok(())
    }
}

/// Country names per language, keyed by lowercase ISO alpha-2 code.
#[derive(Debug, Clone)]
pub struct CountryTable {
    // en, fr, de, it, native
    names: HashMap<String, [Option<String>; 5]>,
}

impl CountryTable {
    pub fn bundled() -> Self {
        Self::from_tsv(include_str!("../data/countries.tsv")).expect("bundled country table parses")
    }

    pub fn from_tsv(text: &str) -> Result<Self, AugmentError> {
        let mut names = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 || cols[1].trim().is_empty() {
                return Err(AugmentError::Malformed {
                    source_name: "countries.tsv".into(),
                    line: i + 1,
                    reason: "expected iso and five names, English required".into(),
                });
            }
            let cell = |j: usize| Some(cols[j].trim().to_string()).filter(|s| !s.is_empty());
            names.insert(cols[0].trim().to_ascii_lowercase(), [cell(1), cell(2), cell(3), cell(4), cell(5)]);
        }
        Ok(CountryTable { names })
    }

    pub fn contains(&self, iso: &str) -> bool {
        self.names.contains_key(&iso.to_ascii_lowercase())
    }
}

/// Everything generation draws words from.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub names: NameCorpora,
    pub countries: CountryTable,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Lexicon { names: NameCorpora::bundled(), countries: CountryTable::bundled() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalizedCountry {
    pub words: Vec<String>,
    pub tag: BaseTag,
    /// The requested language had no entry and English was used.
    pub fell_back: bool,
}

/// Renders a country as an upper-case ISO code (`CountryCode`) or as its
/// name in `language` (`Country`).
pub fn localize_country(
    table: &CountryTable,
    iso: &str,
    form: CountryForm,
    language: Language,
) -> Result<LocalizedCountry, AugmentError> {
    let key = iso.to_ascii_lowercase();
    let row = table.names.get(&key).ok_or_else(|| AugmentError::UnknownCountry(iso.to_string()))?;
    match form {
        CountryForm::IsoCode => Ok(LocalizedCountry {
            words: vec![key.to_ascii_uppercase()],
            tag: BaseTag::CountryCode,
            fell_back: false,
        }),
        CountryForm::FullName | CountryForm::Absent => {
            let slot = Language::ALL.iter().position(|l| *l == language).unwrap_or(0);
            let (name, fell_back) = match &row[slot] {
                Some(n) => (n, false),
                None => (row[0].as_ref().expect("English name required"), true),
            };
            Ok(LocalizedCountry {
                words: name.split_whitespace().map(String::from).collect(),
                tag: BaseTag::Country,
                fell_back,
            })
        }
    }
}

/// One to four words of fake person or company name.
pub fn gen_name<R: Rng + ?Sized>(rng: &mut R, kind: NameKind, corpora: &NameCorpora) -> Vec<String> {
    let pick = |rng: &mut R, list: &[String]| list.choose(rng).expect("non-empty list").clone();
    let mut words = Vec::with_capacity(4);
    match kind {
        NameKind::Person => {
            words.push(pick(rng, &corpora.given_names));
            if rng.random_bool(0.2) {
                words.push(pick(rng, &corpora.given_names));
            }
            words.push(pick(rng, &corpora.surnames));
            if rng.random_bool(0.1) {
                words.push(pick(rng, &corpora.surnames));
            }
        }
        NameKind::Company => {
            words.push(pick(rng, &corpora.company_stems));
            if rng.random_bool(0.3) {
                words.push(pick(rng, &corpora.company_stems));
            }
            words.extend(pick(rng, &corpora.company_suffixes).split_whitespace().map(String::from));
        }
    }
    words.truncate(4);
    words
}

const POSTBOX_PREFIXES: &[&[&str]] = &[
    &["po", "box"],
    &["p.o.", "box"],
    &["pobox"],
    &["box"],
    &["postfach"],
    &["bp"],
    &["cp"],
    &["casilla"],
    &["apartado"],
];

fn digits<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

/// Generates an out-of-address term. `fields` are the address fields a
/// duplicate may be copied from; Country/CountryCode is preferred.
pub fn gen_ooa<R: Rng + ?Sized>(
    rng: &mut R,
    kind: OoaKind,
    fields: &[(BaseTag, Vec<String>)],
) -> Result<Vec<String>, AugmentError> {
    Ok(match kind {
        OoaKind::RandomNumber => {
            let len = rng.random_range(4..=12);
            vec![digits(rng, len)]
        }
        OoaKind::AlphanumericCode => {
            const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
            let len = rng.random_range(6..=11);
            let mut code: Vec<u8> = (0..len).map(|_| *ALNUM.choose(rng).expect("alphabet")).collect();
            let letter = rng.random_range(0..len);
            let digit = (letter + 1 + rng.random_range(0..len - 1)) % len;
            code[letter] = b'A' + rng.random_range(0..26u8);
            code[digit] = b'0' + rng.random_range(0..10u8);
            vec![String::from_utf8(code).expect("ascii")]
        }
        OoaKind::Postbox => {
            let prefix = POSTBOX_PREFIXES.choose(rng).expect("templates");
            let len = rng.random_range(1..=5);
            let mut words: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
            words.push(digits(rng, len));
            words
        }
        OoaKind::DuplicateTerm => {
            let candidates: Vec<&(BaseTag, Vec<String>)> = fields
                .iter()
                .filter(|(t, w)| !w.is_empty() && !matches!(t, BaseTag::HardSep | BaseTag::Ooa))
                .collect();
            let chosen = candidates
                .iter()
                .find(|(t, _)| matches!(t, BaseTag::Country | BaseTag::CountryCode))
                .or_else(|| candidates.choose(rng))
                .ok_or(AugmentError::NothingToDuplicate)?;
            chosen.1.clone()
        }
    })
}

/// An ordered field-tag sequence imposed on a synthetic address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub tags: Vec<BaseTag>,
    pub source_id: String,
    pub weight: f64,
}

/// One entry per field occurrence, in order.
pub fn extract_mask(sample: &Sample) -> MaskSpec {
    MaskSpec {
        tags: sample.fields().iter().map(|f| f.tag).collect(),
        source_id: sample.id.clone(),
        weight: 1.0,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    mask: Vec<String>,
    weight: Option<f64>,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Serialize)]
struct MaskRecordOut<'a> {
    id: &'a str,
    mask: &'a [BaseTag],
    weight: f64,
}

/// Parses one mask-file line `{"mask": [...], "weight": f?}`; blank lines
/// yield `Ok(None)`.
pub fn parse_mask_line(line: &str, source_name: &str, line_no: usize) -> Result<Option<MaskSpec>, AugmentError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let bad = |reason: String| AugmentError::Malformed {
        source_name: source_name.to_string(),
        line: line_no,
        reason,
    };
    let rec: MaskRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    if rec.mask.is_empty() {
        return Err(bad("empty mask".into()));
    }
    let tags = rec
        .mask
        .iter()
        .map(|t| t.parse::<BaseTag>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    let weight = rec.weight.unwrap_or(1.0);
    if !weight.is_finite() || weight <= 0.0 {
        return Err(bad(format!("weight {weight} must be positive")));
    }
    Ok(Some(MaskSpec {
        tags,
        source_id: rec.id.unwrap_or_else(|| format!("{source_name}:{line_no}")),
        weight,
    }))
}

pub fn read_masks<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<MaskSpec>, AugmentError> {
    let mut masks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| AugmentError::Io { path: source_name.to_string(), source })?;
        masks.extend(parse_mask_line(&line, source_name, i + 1)?);
    }
    Ok(masks)
}

pub fn load_masks(path: &Path) -> Result<Vec<MaskSpec>, AugmentError> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| AugmentError::Io { path: name.clone(), source })?;
    read_masks(std::io::BufReader::new(file), &name)
}

pub fn write_masks<W: Write>(masks: &[MaskSpec], mut out: W) -> std::io::Result<()> {
    for m in masks {
        let rec = MaskRecordOut { id: &m.source_id, mask: &m.tags, weight: m.weight };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("mask serializes"))?;
    }
    out.flush()
}

/// The documented example mask file shipped with the crate.
pub fn bundled_masks() -> Vec<MaskSpec> {
    read_masks(include_str!("../data/masks.sample.jsonl").as_bytes(), "masks.sample.jsonl")
        .expect("bundled masks parse")
}

fn push_field(words: &mut Vec<String>, labels: &mut Vec<BioLabel>, tag: BaseTag, field: Vec<String>) {
    for (i, w) in field.into_iter().enumerate() {
        labels.push(if i == 0 { BioLabel::begin(tag) } else { BioLabel::inside(tag) });
        words.push(w);
    }
}

fn assemble(sample: &Sample, fields: Vec<(BaseTag, Vec<String>)>) -> Sample {
    let mut words = Vec::new();
    let mut labels = Vec::new();
    for (tag, field) in fields {
        push_field(&mut words, &mut labels, tag, field);
    }
    Sample { id: sample.id.clone(), words, labels, country: sample.country.clone() }
}

fn apply_mask_inner<R: Rng + ?Sized>(
    sample: &Sample,
    mask: &MaskSpec,
    rng: &mut R,
    cfg: &NoiseConfig,
    lexicon: &Lexicon,
) -> Result<(Sample, bool), AugmentError> {
    if mask.tags.is_empty() {
        return Err(AugmentError::EmptyMask);
    }
    let source: Vec<(BaseTag, Vec<String>)> = sample
        .fields()
        .iter()
        .map(|f| (f.tag, sample.field_words(f).to_vec()))
        .collect();
    let mut used = vec![false; source.len()];
    let mut slots: Vec<Option<(BaseTag, Vec<String>)>> = Vec::with_capacity(mask.tags.len());
    let mut fell_back = false;

    for &tag in &mask.tags {
        if let Some(j) = (0..source.len()).find(|&j| !used[j] && source[j].0 == tag) {
            used[j] = true;
            slots.push(Some(source[j].clone()));
            continue;
        }
        let unsatisfiable = || AugmentError::UnsatisfiableMask { id: sample.id.clone(), tag };
        let synthesized = match tag {
            BaseTag::Ooa => None,
            BaseTag::Name => {
                let kind = cfg.name_kind_dist.sample(rng);
                Some(gen_name(rng, kind, &lexicon.names))
            }
            BaseTag::Country | BaseTag::CountryCode => {
                let iso = sample.country.as_deref().ok_or_else(unsatisfiable)?;
                let form = if tag == BaseTag::Country { CountryForm::FullName } else { CountryForm::IsoCode };
                let language = cfg.country_language_dist.sample(rng);
                let loc = localize_country(&lexicon.countries, iso, form, language)?;
                fell_back |= loc.fell_back;
                Some(loc.words)
            }
            BaseTag::HardSep => Some(vec![HARDSEP_TOKEN.to_string()]),
            _ => return Err(unsatisfiable()),
        };
        slots.push(synthesized.map(|w| (tag, w)));
    }

    // OOA terms go last so a duplicate can copy any field of the output.
    let filled: Vec<(BaseTag, Vec<String>)> = slots.iter().flatten().cloned().collect();
    let pool = if filled.is_empty() { &source } else { &filled };
    for slot in slots.iter_mut().filter(|s| s.is_none()) {
        let kind = cfg.ooa_kind_dist.sample(rng);
        *slot = Some((BaseTag::Ooa, gen_ooa(rng, kind, pool)?));
    }
    Ok((assemble(sample, slots.into_iter().flatten().collect()), fell_back))
}

/// Reorders, drops and synthesizes fields so the output follows `mask`.
///
/// Source fields matching a mask entry are reused verbatim (the n-th mask
/// occurrence of a tag takes the n-th source field with that tag). Missing
/// Name, Country, CountryCode, HardSep and OOA fields are generated; any
/// other missing tag makes the mask unsatisfiable for this sample.
pub fn apply_mask<R: Rng + ?Sized>(
    sample: &Sample,
    mask: &MaskSpec,
    rng: &mut R,
    cfg: &NoiseConfig,
    lexicon: &Lexicon,
) -> Result<Sample, AugmentError> {
    apply_mask_inner(sample, mask, rng, cfg, lexicon).map(|(s, _)| s)
}

/// Inserts a `$` separator (`B-HardSep`) right after the leading Name field.
pub fn add_hardsep(sample: &Sample) -> Result<Sample, AugmentError> {
    let fields = sample.fields();
    let name = fields
        .first()
        .filter(|f| f.tag == BaseTag::Name)
        .ok_or_else(|| AugmentError::NoName { id: sample.id.clone() })?;
    let at = name.span.end;
    let mut out = sample.clone();
    out.words.insert(at, HARDSEP_TOKEN.to_string());
    out.labels.insert(at, BioLabel::begin(BaseTag::HardSep));
    Ok(out)
}

/// Keeps only mask entries the sample can fill from its own fields,
/// respecting per-tag occurrence counts.
fn restrict_to_source(mask: &MaskSpec, sample: &Sample) -> MaskSpec {
    let mut available: HashMap<BaseTag, usize> = HashMap::new();
    for f in sample.fields() {
        *available.entry(f.tag).or_default() += 1;
    }
    let tags = mask
        .tags
        .iter()
        .copied()
        .filter(|t| match available.get_mut(t) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .collect();
    MaskSpec { tags, source_id: mask.source_id.clone(), weight: mask.weight }
}

/// Lowercases every word.
pub fn clean(sample: &Sample) -> Sample {
    let mut out = sample.clone();
    for w in &mut out.words {
        *w = w.to_lowercase();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataVersion {
    V0,
    V1,
    V2,
}

impl FromStr for DataVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v0" => Ok(DataVersion::V0),
            "v1" => Ok(DataVersion::V1),
            "v2" => Ok(DataVersion::V2),
            other => Err(format!("unknown data version {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub total: usize,
    /// Ids passed through unmodified after every mask draw failed.
    pub skipped: Vec<String>,
    pub redraws: usize,
    pub hardsep_added: usize,
    pub translation_fallbacks: usize,
}

struct Outcome {
    sample: Sample,
    skipped: bool,
    redraws: usize,
    hardsep: bool,
    fell_back: bool,
}

struct MaskSampler<'a> {
    masks: &'a [MaskSpec],
    cumulative: Vec<f64>,
}

impl<'a> MaskSampler<'a> {
    fn new(masks: &'a [MaskSpec]) -> Self {
        let mut acc = 0.0;
        let cumulative = masks
            .iter()
            .map(|m| {
                acc += m.weight;
                acc
            })
            .collect();
        MaskSampler { masks, cumulative }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a MaskSpec {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.masks.len() - 1);
        &self.masks[i]
    }
}

fn augment_one(
    sample: &Sample,
    version: DataVersion,
    sampler: &MaskSampler<'_>,
    cfg: &NoiseConfig,
    lexicon: &Lexicon,
) -> Result<Outcome, AugmentError> {
    let mut rng = seed::stream(cfg.seed, &sample.id);
    let mut outcome = Outcome {
        sample: sample.clone(),
        skipped: true,
        redraws: 0,
        hardsep: false,
        fell_back: false,
    };
    for attempt in 0..MAX_MASK_DRAWS {
        let mask = sampler.draw(&mut rng);
        let result = match version {
            DataVersion::V0 => unreachable!("V0 is not masked"),
            DataVersion::V1 => {
                let restricted = restrict_to_source(mask, sample);
                if restricted.tags.is_empty() {
                    continue;
                }
                apply_mask_inner(sample, &restricted, &mut rng, cfg, lexicon).map(|(s, fb)| (clean(&s), fb))
            }
            DataVersion::V2 => apply_mask_inner(sample, mask, &mut rng, cfg, lexicon),
        };
        match result {
            Ok((s, fb)) => {
                outcome.sample = s;
                outcome.skipped = false;
                outcome.redraws = attempt;
                outcome.fell_back = fb;
                break;
            }
            Err(AugmentError::UnsatisfiableMask { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if outcome.skipped {
        outcome.redraws = MAX_MASK_DRAWS;
    }
    if version == DataVersion::V2 && rng.random_bool(cfg.hardsep_fraction) {
        let has_sep = outcome.sample.labels.iter().any(|l| l.base == BaseTag::HardSep);
        if !has_sep {
            if let Ok(s) = add_hardsep(&outcome.sample) {
                outcome.sample = s;
                outcome.hardsep = true;
            }
        }
    }
    Ok(outcome)
}

/// Builds one dataset version from clean samples.
///
/// * V0 returns the input unchanged.
/// * V1 draws a mask per sample, restricts it to tags the sample has, and
///   lowercases; nothing is synthesized.
/// * V2 applies the full mask (synthesizing missing fields) and then a `$`
///   separator with probability `cfg.hardsep_fraction`.
///
/// Each sample draws from its own stream seeded by `(cfg.seed, id)`, so the
/// result does not depend on thread scheduling.
pub fn build_version(
    corpus: &Corpus,
    version: DataVersion,
    masks: &[MaskSpec],
    cfg: &NoiseConfig,
    lexicon: &Lexicon,
) -> Result<(Corpus, BuildReport), AugmentError> {
    cfg.validate()?;
    let provenance = format!("{} ({version:?})", corpus.provenance);
    let mut report = BuildReport { total: corpus.len(), ..Default::default() };
    if version == DataVersion::V0 {
        return Ok((Corpus::new(corpus.samples.clone(), provenance), report));
    }
    if masks.is_empty() {
        return Err(AugmentError::EmptyMasks);
    }
    if let Some(m) = masks.iter().find(|m| m.tags.is_empty() || !m.weight.is_finite() || m.weight <= 0.0) {
        return Err(AugmentError::InvalidConfig(format!("mask {} is empty or has non-positive weight", m.source_id)));
    }
    let sampler = MaskSampler::new(masks);
    let outcomes = corpus
        .samples
        .par_iter()
        .map(|s| augment_one(s, version, &sampler, cfg, lexicon))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if o.skipped {
            report.skipped.push(o.sample.id.clone());
        }
        report.redraws += o.redraws;
        report.hardsep_added += usize::from(o.hardsep);
        report.translation_fallbacks += usize::from(o.fell_back);
        samples.push(o.sample);
    }
    Ok((Corpus::new(samples, provenance), report))
}

/// Training-data ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Every label becomes `B-<tag>`, equivalent to a prefix-free tag set.
    pub no_prefix: bool,
    /// Drop `$` separator tokens.
    pub no_hardsep: bool,
}

pub fn ablate(sample: &Sample, ablation: Ablation) -> Sample {
    let mut out = sample.clone();
    if ablation.no_hardsep {
        let keep: Vec<bool> = out.labels.iter().map(|l| l.base != BaseTag::HardSep).collect();
        let mut k = keep.iter();
        out.words.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        out.labels.retain(|_| *k.next().unwrap());
    }
    if ablation.no_prefix {
        for l in &mut out.labels {
            *l = BioLabel::begin(l.base);
        }
    }
    out
}

pub fn ablate_corpus(corpus: &Corpus, ablation: Ablation) -> Corpus {
    Corpus::new(corpus.samples.iter().map(|s| ablate(s, ablation)).collect(), corpus.provenance.clone())
}

/// Parameters for generating stand-in production masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSynthConfig {
    pub count: usize,
    pub unit_probability: f64,
    pub drop_probability: f64,
    pub swap_probability: f64,
    pub ooa_probability: f64,
    pub seed: u64,
}

impl Default for MaskSynthConfig {
    fn default() -> Self {
        MaskSynthConfig {
            count: 500,
            unit_probability: 0.1,
            drop_probability: 0.15,
            swap_probability: 0.3,
            ooa_probability: 0.35,
            seed: 42,
        }
    }
}

const CANONICAL_ORDERS: &[&[BaseTag]] = {
    use BaseTag::*;
    &[
        &[StreetName, StreetNumber, PostalCode, Municipality, Province],
        &[StreetNumber, StreetName, Municipality, Province, PostalCode],
        &[StreetNumber, StreetName, Municipality, PostalCode],
        &[StreetName, StreetNumber, Municipality, PostalCode, Province],
        &[PostalCode, Municipality, StreetName, StreetNumber],
    ]
};

/// Generates masks by perturbing canonical address orders: optional Unit,
/// random drops and adjacent swaps, a leading Name, a country in the form
/// drawn from `noise.country_form_dist`, and an optional OOA term.
pub fn synthesize_masks(cfg: &MaskSynthConfig, noise: &NoiseConfig) -> Result<Vec<MaskSpec>, AugmentError> {
    noise.validate()?;
    for (name, p) in [
        ("unit_probability", cfg.unit_probability),
        ("drop_probability", cfg.drop_probability),
        ("swap_probability", cfg.swap_probability),
        ("ooa_probability", cfg.ooa_probability),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(AugmentError::InvalidConfig(format!("{name} {p} outside [0, 1]")));
        }
    }
    let mut rng = seed::stream(cfg.seed, "mask-synth");
    let mut masks = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut tags: Vec<BaseTag> = CANONICAL_ORDERS.choose(&mut rng).expect("orders").to_vec();
        if rng.random_bool(cfg.unit_probability) {
            let at = tags.iter().position(|t| *t == BaseTag::StreetNumber).map_or(0, |p| p + 1);
            tags.insert(at, BaseTag::Unit);
        }
        tags.retain(|t| {
            !matches!(t, BaseTag::Province | BaseTag::PostalCode | BaseTag::StreetNumber)
                || !rng.random_bool(cfg.drop_probability)
        });
        if tags.len() > 1 && rng.random_bool(cfg.swap_probability) {
            let j = rng.random_range(0..tags.len() - 1);
            tags.swap(j, j + 1);
        }
        match noise.country_form_dist.sample(&mut rng) {
            CountryForm::FullName => tags.push(BaseTag::Country),
            CountryForm::IsoCode => tags.push(BaseTag::CountryCode),
            CountryForm::Absent => {}
        }
        tags.insert(0, BaseTag::Name);
        if rng.random_bool(cfg.ooa_probability) {
            let at = if rng.random_bool(0.7) { tags.len() } else { rng.random_range(1..=tags.len()) };
            tags.insert(at, BaseTag::Ooa);
        }
        masks.push(MaskSpec { tags, source_id: format!("synth-{i}"), weight: 1.0 });
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{to_bio, validate_bio};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use BaseTag::*;

    fn reference_sample() -> Sample {
        Sample::from_base(
            "t1",
            "jakob-sturm-w. 35 80995 munich bavaria".split(' ').map(String::from).collect(),
            &[StreetName, StreetNumber, PostalCode, Municipality, Province],
            Some("de".into()),
        )
        .unwrap()
    }

    fn mask(tags: &[BaseTag]) -> MaskSpec {
        MaskSpec { tags: tags.to_vec(), source_id: "m".into(), weight: 1.0 }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn extract_mask_counts_fields_not_words() {
        let s = Sample::from_base(
            "p",
            "john doe main st 4 x".split(' ').map(String::from).collect(),
            &[Name, Name, StreetName, StreetName, StreetNumber, Ooa],
            None,
        )
        .unwrap();
        assert_eq!(extract_mask(&s).tags, vec![Name, StreetName, StreetNumber, Ooa]);
        let single = Sample::from_base("s", vec!["a".into()], &[Municipality], None).unwrap();
        assert_eq!(extract_mask(&single).tags, vec![Municipality]);
        let split = Sample::new(
            "d",
            vec!["a".into(), "9".into(), "b".into()],
            to_bio(&[StreetName, Ooa, StreetName]),
            None,
        )
        .unwrap();
        assert_eq!(extract_mask(&split).tags, vec![StreetName, Ooa, StreetName]);
    }

    #[test]
    fn localize_examples() {
        let t = CountryTable::bundled();
        let de = localize_country(&t, "de", CountryForm::FullName, Language::En).unwrap();
        assert_eq!((de.words, de.tag), (vec!["germany".to_string()], Country));
        let br = localize_country(&t, "br", CountryForm::IsoCode, Language::En).unwrap();
        assert_eq!((br.words, br.tag), (vec!["BR".to_string()], CountryCode));
        let de_de = localize_country(&t, "de", CountryForm::FullName, Language::De).unwrap();
        assert_eq!(de_de.words, vec!["deutschland"]);
        let gb = localize_country(&t, "GB", CountryForm::FullName, Language::It).unwrap();
        assert_eq!(gb.words, vec!["regno", "unito"]);
        let li = localize_country(&t, "li", CountryForm::FullName, Language::Fr).unwrap();
        assert!(li.fell_back);
        assert_eq!(li.words, vec!["liechtenstein"]);
        assert!(matches!(
            localize_country(&t, "xx", CountryForm::FullName, Language::En),
            Err(AugmentError::UnknownCountry(_))
        ));
    }

    #[test]
    fn bundled_lexicon_is_latin() {
        NameCorpora::bundled().validate().unwrap();
    }

    #[test]
    fn gen_name_shapes() {
        let names = NameCorpora::bundled();
        let mut r = rng();
        for _ in 0..200 {
            let p = gen_name(&mut r, NameKind::Person, &names);
            assert!((2..=4).contains(&p.len()));
            assert!(names.given_names.contains(&p[0]));
            let c = gen_name(&mut r, NameKind::Company, &names);
            assert!((2..=4).contains(&c.len()));
            assert!(names.company_stems.contains(&c[0]));
            let suffix_words: Vec<&str> = names.company_suffixes.iter().flat_map(|s| s.split(' ')).collect();
            assert!(suffix_words.contains(&c.last().unwrap().as_str()));
        }
        assert_eq!(gen_name(&mut rng(), NameKind::Person, &names), gen_name(&mut rng(), NameKind::Person, &names));
    }

    #[test]
    fn ooa_kinds() {
        let mut r = rng();
        for _ in 0..300 {
            let n = gen_ooa(&mut r, OoaKind::RandomNumber, &[]).unwrap();
            assert_eq!(n.len(), 1);
            assert!((4..=12).contains(&n[0].len()) && n[0].bytes().all(|b| b.is_ascii_digit()));
            let code = gen_ooa(&mut r, OoaKind::AlphanumericCode, &[]).unwrap();
            assert!(code[0].bytes().any(|b| b.is_ascii_digit()));
            assert!(code[0].bytes().any(|b| b.is_ascii_uppercase()));
            let pb = gen_ooa(&mut r, OoaKind::Postbox, &[]).unwrap();
            let prefix: Vec<&str> = pb[..pb.len() - 1].iter().map(String::as_str).collect();
            assert!(POSTBOX_PREFIXES.contains(&prefix.as_slice()));
            assert!(pb.last().unwrap().bytes().all(|b| b.is_ascii_digit()));
        }
        let fields = vec![(Municipality, vec!["munich".to_string()]), (Country, vec!["germany".to_string()])];
        assert_eq!(gen_ooa(&mut r, OoaKind::DuplicateTerm, &fields).unwrap(), vec!["germany"]);
        assert!(matches!(gen_ooa(&mut r, OoaKind::DuplicateTerm, &[]), Err(AugmentError::NothingToDuplicate)));
    }

    #[test]
    fn production_mask_on_reference_sample() {
        let cfg = NoiseConfig {
            ooa_kind_dist: Categorical::certain(OoaKind::DuplicateTerm),
            country_language_dist: Categorical::certain(Language::En),
            ..Default::default()
        };
        let m = mask(&[Name, StreetName, StreetNumber, Municipality, PostalCode, Country, Ooa]);
        let out = apply_mask(&reference_sample(), &m, &mut rng(), &cfg, &Lexicon::bundled()).unwrap();
        let fields = out.fields();
        assert_eq!(fields.iter().map(|f| f.tag).collect::<Vec<_>>(), m.tags);
        let tail: Vec<&str> = out.words[fields[1].span.start..].iter().map(String::as_str).collect();
        assert_eq!(tail, ["jakob-sturm-w.", "35", "munich", "80995", "germany", "germany"]);
        assert!(validate_bio(&out.labels).is_empty());
    }

    #[test]
    fn identity_and_projection_masks() {
        let s = reference_sample();
        let lex = Lexicon::bundled();
        let cfg = NoiseConfig::default();
        let same = apply_mask(&s, &extract_mask(&s), &mut rng(), &cfg, &lex).unwrap();
        assert_eq!(same.words, s.words);
        assert_eq!(same.labels, s.labels);
        let proj = apply_mask(&s, &mask(&[Municipality]), &mut rng(), &cfg, &lex).unwrap();
        assert_eq!(proj.words, vec!["munich"]);
    }

    #[test]
    fn unsatisfiable_mask() {
        let s = Sample::from_base("u", vec!["munich".into()], &[Municipality], Some("de".into())).unwrap();
        let err = apply_mask(&s, &mask(&[StreetNumber]), &mut rng(), &NoiseConfig::default(), &Lexicon::bundled())
            .unwrap_err();
        assert!(matches!(err, AugmentError::UnsatisfiableMask { tag: StreetNumber, .. }));
        let no_country = Sample::from_base("n", vec!["munich".into()], &[Municipality], None).unwrap();
        let err = apply_mask(&no_country, &mask(&[Country]), &mut rng(), &NoiseConfig::default(), &Lexicon::bundled())
            .unwrap_err();
        assert!(matches!(err, AugmentError::UnsatisfiableMask { tag: Country, .. }));
    }

    #[test]
    fn adjacent_same_tag_fields_stay_separate() {
        let cfg = NoiseConfig::default();
        let m = mask(&[Country, CountryCode, Ooa, Ooa]);
        let out = apply_mask(&reference_sample(), &m, &mut rng(), &cfg, &Lexicon::bundled()).unwrap();
        assert_eq!(extract_mask(&out).tags, m.tags);
    }

    #[test]
    fn hardsep_after_name() {
        let s = Sample::from_base(
            "h",
            "john doe jakob-sturm-w. 35".split(' ').map(String::from).collect(),
            &[Name, Name, StreetName, StreetNumber],
            None,
        )
        .unwrap();
        let out = add_hardsep(&s).unwrap();
        assert_eq!(out.words[2], "$");
        assert_eq!(out.labels[2], BioLabel::begin(HardSep));
        assert!(matches!(add_hardsep(&reference_sample()), Err(AugmentError::NoName { .. })));
    }

    #[test]
    fn v0_is_identity() {
        let c = Corpus::new(vec![reference_sample()], "t");
        let (out, report) = build_version(&c, DataVersion::V0, &[], &NoiseConfig::default(), &Lexicon::bundled()).unwrap();
        assert_eq!(out.samples, c.samples);
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn v1_never_synthesizes() {
        let c = Corpus::new((0..50).map(|i| Sample { id: format!("s{i}"), ..reference_sample() }).collect(), "t");
        let masks = bundled_masks();
        let (out, _) = build_version(&c, DataVersion::V1, &masks, &NoiseConfig::default(), &Lexicon::bundled()).unwrap();
        for s in &out.samples {
            assert!(s.labels.iter().all(|l| l.base.is_original()), "{:?}", s);
            assert!(validate_bio(&s.labels).is_empty());
        }
        assert!(build_version(&c, DataVersion::V1, &[], &NoiseConfig::default(), &Lexicon::bundled()).is_err());
    }

    #[test]
    fn v2_skips_unsatisfiable_samples() {
        let s = Sample::from_base("only", vec!["munich".into()], &[Municipality], Some("de".into())).unwrap();
        let c = Corpus::new(vec![s.clone()], "t");
        let (out, report) =
            build_version(&c, DataVersion::V2, &[mask(&[StreetNumber])], &NoiseConfig::default(), &Lexicon::bundled())
                .unwrap();
        assert_eq!(report.skipped, vec!["only".to_string()]);
        assert_eq!(out.samples[0].words, s.words);
    }

    #[test]
    fn ablation_switches() {
        let s = Sample::from_base(
            "a",
            "john $ doe".split(' ').map(String::from).collect(),
            &[Name, HardSep, Name],
            None,
        )
        .unwrap();
        let no_sep = ablate(&s, Ablation { no_hardsep: true, no_prefix: false });
        assert_eq!(no_sep.words, vec!["john", "doe"]);
        assert_eq!(no_sep.labels, vec![BioLabel::begin(Name); 2]);
        let flat = ablate(&no_sep, Ablation { no_prefix: true, no_hardsep: false });
        assert_eq!(flat.labels, vec![BioLabel::begin(Name); 2]);
    }

    #[test]
    fn config_overrides_and_validation() {
        let mut cfg = NoiseConfig::default();
        cfg.set("hardsep_fraction", "0.5").unwrap();
        cfg.set("ooa_kind_dist.postbox", "0.5").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("ooa_kind_dist.random-number", "0.0").unwrap();
        cfg.validate().unwrap();
        assert!(cfg.set("ooa_kind_dist.phone", "0.1").is_err());
        assert!(cfg.set("nope", "1").is_err());
        let back = NoiseConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial = NoiseConfig::from_toml("hardsep_fraction = 0.25\n").unwrap();
        assert_eq!(partial.hardsep_fraction, 0.25);
        assert!(NoiseConfig::from_toml("hardsep_fraction = 1.5\n").is_err());
    }

    #[test]
    fn mask_file_parsing() {
        let m = parse_mask_line(r#"{"mask":["Name","OOA"],"weight":2.5}"#, "m.jsonl", 1).unwrap().unwrap();
        assert_eq!(m.tags, vec![Name, Ooa]);
        assert_eq!(m.weight, 2.5);
        assert!(parse_mask_line(r#"{"mask":[]}"#, "m", 1).is_err());
        assert!(parse_mask_line(r#"{"mask":["Street"]}"#, "m", 1).is_err());
        assert!(parse_mask_line(r#"{"mask":["Name"],"weight":0}"#, "m", 1).is_err());
        assert!(parse_mask_line("  ", "m", 1).unwrap().is_none());
        let mut buf = Vec::new();
        write_masks(std::slice::from_ref(&m), &mut buf).unwrap();
        let again = read_masks(&buf[..], "x").unwrap();
        assert_eq!(again[0].tags, m.tags);
        assert!(!bundled_masks().is_empty());
    }

    #[test]
    fn synthesized_masks_lead_with_name() {
        let masks = synthesize_masks(&MaskSynthConfig { count: 200, ..Default::default() }, &NoiseConfig::default()).unwrap();
        assert_eq!(masks.len(), 200);
        assert!(masks.iter().all(|m| m.tags[0] == Name));
        assert!(masks.iter().any(|m| m.tags.contains(&Ooa)));
        assert!(masks.iter().any(|m| m.tags.contains(&CountryCode)));
        let again = synthesize_masks(&MaskSynthConfig { count: 200, ..Default::default() }, &NoiseConfig::default()).unwrap();
        assert_eq!(masks, again);
    }
}
