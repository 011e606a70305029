//! Token-level precision, recall and F1 per tag, macro/micro averages,
//! cross-fold aggregation and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::EvalError;
use crate::schema::{BaseTag, BioLabel};

/// Row key of a report: a full label, or a base tag when prefixes are
/// stripped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKey {
    Label(BioLabel),
    Base(BaseTag),
}

impl TagKey {
    fn of(label: BioLabel, strip: bool) -> Self {
        if strip {
            TagKey::Base(label.base)
        } else {
            TagKey::Label(label)
        }
    }

    pub fn base(self) -> BaseTag {
        match self {
            TagKey::Label(l) => l.base,
            TagKey::Base(b) => b,
        }
    }

    fn order(self) -> (usize, usize) {
        match self {
            TagKey::Label(l) => (1, l.index()),
            TagKey::Base(b) => (0, b.index()),
        }
    }
}

impl Ord for TagKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.order().cmp(&other.order())
    }
}

impl PartialOrd for TagKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagKey::Label(l) => l.fmt(f),
            TagKey::Base(b) => f.write_str(b.as_str()),
        }
    }
}

impl FromStr for TagKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<BioLabel>()
            .map(TagKey::Label)
            .or_else(|_| s.parse::<BaseTag>().map(TagKey::Base))
            .map_err(|_| format!("unknown tag {s:?}"))
    }
}

impl Serialize for TagKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TagKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    #[default]
    Macro,
    Micro,
}

impl FromStr for Average {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Average::Macro),
            "micro" => Ok(Average::Micro),
            _ => Err(format!("unknown average {s:?} (expected macro or micro)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Compare base tags instead of full BIO labels.
    pub strip: bool,
    pub average: Average,
    /// Tags left out of the headline average (their rows are still reported).
    pub exclude: BTreeSet<BaseTag>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold tokens carrying this tag.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl TagMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        TagMetrics { precision, recall, f1: harmonic(precision, recall), support: tp + fn_, tp, fp, fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_tag: BTreeMap<TagKey, TagMetrics>,
    /// Headline F1 under `options.average`; named for the default average.
    pub macro_f1: f64,
    pub token_count: usize,
    /// Predictions that were missing (e.g. unparseable model output).
    pub unresolved: usize,
    pub options: ScoreOptions,
}

type Counts = BTreeMap<TagKey, [usize; 3]>;

fn merge(mut a: (Counts, usize, usize), b: (Counts, usize, usize)) -> (Counts, usize, usize) {
    for (k, v) in b.0 {
        let e = a.0.entry(k).or_default();
        for i in 0..3 {
            e[i] += v[i];
        }
    }
    (a.0, a.1 + b.1, a.2 + b.2)
}

/// Scores `(id, gold, pred)` triples. A `None` prediction counts as a miss
/// for the gold tag and as no prediction at all.
pub fn score<'a, I>(samples: I, opts: &ScoreOptions) -> Result<EvalReport, EvalError>
where
    I: IntoParallelIterator<Item = (&'a str, &'a [BioLabel], &'a [Option<BioLabel>])>,
{
    let (counts, tokens, unresolved) = samples
        .into_par_iter()
        .map(|(id, gold, pred)| {
            if gold.len() != pred.len() {
                return Err(EvalError::LengthMismatch { id: id.to_string(), gold: gold.len(), pred: pred.len() });
            }
            let mut c = Counts::new();
            let mut unresolved = 0;
            for (g, p) in gold.iter().zip(pred) {
                let gk = TagKey::of(*g, opts.strip);
                match p.map(|p| TagKey::of(p, opts.strip)) {
                    Some(pk) if pk == gk => c.entry(gk).or_default()[0] += 1,
                    Some(pk) => {
                        c.entry(pk).or_default()[1] += 1;
                        c.entry(gk).or_default()[2] += 1;
                    }
                    None => {
                        unresolved += 1;
                        c.entry(gk).or_default()[2] += 1;
                    }
                }
            }
            Ok((c, gold.len(), unresolved))
        })
        .try_reduce(|| (Counts::new(), 0, 0), |a, b| Ok(merge(a, b)))?;

    let per_tag: BTreeMap<TagKey, TagMetrics> =
        counts.iter().map(|(k, [tp, fp, fn_])| (*k, TagMetrics::from_counts(*tp, *fp, *fn_))).collect();
    let included = |k: &TagKey| !opts.exclude.contains(&k.base());
    let headline = match opts.average {
        Average::Macro => {
            let f1s: Vec<f64> =
                per_tag.iter().filter(|(k, m)| m.support > 0 && included(k)).map(|(_, m)| m.f1).collect();
            if f1s.is_empty() {
                0.0
            } else {
                f1s.iter().sum::<f64>() / f1s.len() as f64
            }
        }
        Average::Micro => {
            let (tp, fp, fn_) = counts
                .iter()
                .filter(|(k, _)| included(k))
                .fold((0, 0, 0), |a, (_, c)| (a.0 + c[0], a.1 + c[1], a.2 + c[2]));
            TagMetrics::from_counts(tp, fp, fn_).f1
        }
    };
    Ok(EvalReport { per_tag, macro_f1: headline, token_count: tokens, unresolved, options: opts.clone() })
}

/// Scores fully resolved predictions.
pub fn score_labels(
    ids: &[&str],
    gold: &[Vec<BioLabel>],
    pred: &[Vec<BioLabel>],
    opts: &ScoreOptions,
) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() || ids.len() != gold.len() {
        return Err(EvalError::LengthMismatch { id: "<corpus>".into(), gold: gold.len(), pred: pred.len() });
    }
    let pred: Vec<Vec<Option<BioLabel>>> = pred.iter().map(|p| p.iter().copied().map(Some).collect()).collect();
    let triples: Vec<_> = ids.iter().zip(gold).zip(&pred).map(|((i, g), p)| (*i, g.as_slice(), p.as_slice())).collect();
    score(triples, opts)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    id: String,
    #[serde(default)]
    address: Option<String>,
    tags: Vec<Option<String>>,
}

/// `(id, per-word labels)`; `None` marks an unresolved word.
pub type PredictionRecordOut = (String, Vec<Option<BioLabel>>);

/// One line of a prediction file: `{"id": .., "tags": ["B-Name", null, ..]}`
/// with an optional `address`. `null` marks an unresolved word.
pub fn parse_prediction_record(
    line: &str,
    source_name: &str,
    line_no: usize,
) -> Result<Option<PredictionRecordOut>, EvalError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let malformed = |reason: String| EvalError::Malformed { source_name: source_name.into(), line: line_no, reason };
    let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if let Some(a) = &rec.address {
        let n = a.split_whitespace().count();
        if n != rec.tags.len() {
            return Err(malformed(format!("{n} words but {} tags", rec.tags.len())));
        }
    }
    let labels = rec
        .tags
        .iter()
        .map(|t| t.as_deref().map(|t| t.parse::<BioLabel>().map_err(|e| malformed(e.to_string()))).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some((rec.id, labels)))
}

pub fn read_predictions<R: std::io::BufRead>(
    reader: R,
    source_name: &str,
) -> Result<BTreeMap<String, Vec<Option<BioLabel>>>, EvalError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let malformed = |reason: String| EvalError::Malformed { source_name: source_name.into(), line: i + 1, reason };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if let Some((id, labels)) = parse_prediction_record(&line, source_name, i + 1)? {
            if out.insert(id.clone(), labels).is_some() {
                return Err(malformed(format!("duplicate sample id {id:?}")));
            }
        }
    }
    Ok(out)
}

pub fn load_predictions(path: &std::path::Path) -> Result<BTreeMap<String, Vec<Option<BioLabel>>>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    read_predictions(std::io::BufReader::new(file), &path.display().to_string())
}

/// Writes one prediction record.
pub fn prediction_to_json(id: &str, words: Option<&[String]>, labels: &[Option<BioLabel>]) -> String {
    let tags: Vec<Option<String>> = labels.iter().map(|l| l.map(|l| l.to_string())).collect();
    let mut obj = serde_json::Map::new();
    obj.insert("id".into(), id.into());
    if let Some(w) = words {
        obj.insert("address".into(), w.join(" ").into());
    }
    obj.insert("tags".into(), serde_json::to_value(tags).expect("json"));
    serde_json::Value::Object(obj).to_string()
}

/// Scores a prediction map against a gold corpus. Every gold sample needs a
/// prediction; extra predictions are ignored.
pub fn score_corpus(
    gold: &crate::ingest::Corpus,
    pred: &BTreeMap<String, Vec<Option<BioLabel>>>,
    opts: &ScoreOptions,
) -> Result<EvalReport, EvalError> {
    let triples = gold
        .samples
        .iter()
        .map(|s| {
            let p = pred.get(&s.id).ok_or_else(|| EvalError::MissingPrediction(s.id.clone()))?;
            Ok((s.id.as_str(), s.labels.as_slice(), p.as_slice()))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    score(triples, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean_macro_f1: f64,
    /// Population standard deviation (not scaled).
    pub std_macro_f1: f64,
    pub single_fold: bool,
    pub reports: Vec<EvalReport>,
}

pub fn aggregate_folds(reports: Vec<EvalReport>) -> Result<FoldSummary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyFolds);
    }
    let values: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let (mean, std) = mean_std(&values);
    Ok(FoldSummary { mean_macro_f1: mean, std_macro_f1: std, single_fold: reports.len() == 1, reports })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standard deviation scaled by 10^3, three decimals, trailing zeros
/// trimmed down to one (`0.05` renders `"50.0"`).
pub fn render_std(std: f64) -> String {
    let s = format!("{:.3}", std * 1000.0);
    let trimmed = s.trim_end_matches('0');
    if trimmed.ends_with('.') {
        format!("{trimmed}0")
    } else {
        trimmed.to_string()
    }
}

pub fn render_mean(mean: f64) -> String {
    format!("{mean:.4}")
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub data_version: String,
    pub split: String,
    pub summary: FoldSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "table" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            _ => Err(format!("unknown report format {s:?} (expected text, csv or jsonl)")),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 6] = ["model", "data_version", "split", "mean", "std (×10³)", "folds"];

fn cells(row: &ReportRow) -> [String; 6] {
    [
        row.model.clone(),
        row.data_version.clone(),
        row.split.clone(),
        render_mean(row.summary.mean_macro_f1),
        render_std(row.summary.std_macro_f1),
        if row.summary.single_fold { "1 (single fold)".to_string() } else { row.summary.reports.len().to_string() },
    ]
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for row in rows {
                w.write_record(cells(row)).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        ReportFormat::Jsonl => {
            let mut out = Vec::new();
            for row in rows {
                let obj: serde_json::Map<String, serde_json::Value> =
                    REPORT_COLUMNS.iter().zip(cells(row)).map(|(k, v)| (k.to_string(), v.into())).collect();
                out.extend(serde_json::to_vec(&obj).expect("json"));
                out.push(b'\n');
            }
            out
        }
        ReportFormat::Text => {
            let table: Vec<[String; 6]> = rows.iter().map(cells).collect();
            let mut widths = REPORT_COLUMNS.map(|c| c.chars().count());
            for r in &table {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cols: &[String]| {
                let parts: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                parts.join("  ").trim_end().to_string() + "\n"
            };
            let mut out = line(&REPORT_COLUMNS.map(String::from));
            out += &line(&widths.map(|w| "-".repeat(w)));
            for r in &table {
                out += &line(r);
            }
            out.into_bytes()
        }
    }
}

/// Re-reads a CSV report as rows of rendered cells.
pub fn parse_csv_report(bytes: &[u8]) -> Result<Vec<[String; 6]>, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(REPORT_COLUMNS) {
        return Err(format!("unexpected header {header:?}"));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let v: Vec<String> = rec.iter().map(String::from).collect();
            v.try_into().map_err(|v: Vec<String>| format!("expected 6 columns, got {}", v.len()))
        })
        .collect()
}

/// Per-tag breakdown of one report as a text table.
pub fn render_per_tag(report: &EvalReport) -> String {
    let mut out = format!("{:<18} {:>9} {:>9} {:>9} {:>8}\n", "tag", "precision", "recall", "f1", "support");
    for (k, m) in &report.per_tag {
        out += &format!("{:<18} {:>9.4} {:>9.4} {:>9.4} {:>8}\n", k.to_string(), m.precision, m.recall, m.f1, m.support);
    }
    let name = match report.options.average {
        Average::Macro => "macro f1",
        Average::Micro => "micro f1",
    };
    out += &format!("{name}: {:.4} over {} tokens", report.macro_f1, report.token_count);
    if report.unresolved > 0 {
        out += &format!(" ({} unresolved)", report.unresolved);
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::strip_prefix;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use BaseTag::*;

    fn b(t: BaseTag) -> BioLabel {
        BioLabel::begin(t)
    }

    fn one(gold: &[BioLabel], pred: &[BioLabel], opts: &ScoreOptions) -> EvalReport {
        score_labels(&["s"], &[gold.to_vec()], &[pred.to_vec()], opts).unwrap()
    }

    /// Counts from an explicit confusion matrix, written without the
    /// production code's incremental counting.
    fn oracle(gold: &[Vec<BioLabel>], pred: &[Vec<BioLabel>]) -> (HashMap<BioLabel, (f64, f64, f64)>, f64) {
        let mut matrix: HashMap<(BioLabel, BioLabel), usize> = HashMap::new();
        for (g, p) in gold.iter().zip(pred) {
            for (x, y) in g.iter().zip(p) {
                *matrix.entry((*x, *y)).or_default() += 1;
            }
        }
        let mut out = HashMap::new();
        let mut f1s = Vec::new();
        for l in BioLabel::all() {
            let tp = *matrix.get(&(l, l)).unwrap_or(&0) as f64;
            let row: usize = matrix.iter().filter(|((g, _), _)| *g == l).map(|(_, c)| c).sum();
            let col: usize = matrix.iter().filter(|((_, p), _)| *p == l).map(|(_, c)| c).sum();
            if row + col == 0 {
                continue;
            }
            let p = if col == 0 { 0.0 } else { tp / col as f64 };
            let r = if row == 0 { 0.0 } else { tp / row as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if row > 0 {
                f1s.push(f);
            }
            out.insert(l, (p, r, f));
        }
        let macro_f1 = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
        (out, macro_f1)
    }

    #[test]
    fn worked_example() {
        let r = one(&[b(Name), b(Country)], &[b(Name), b(Province)], &ScoreOptions::default());
        let name = r.per_tag[&TagKey::Label(b(Name))];
        assert_eq!((name.precision, name.recall, name.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.per_tag[&TagKey::Label(b(Country))].recall, 0.0);
        assert_eq!(r.per_tag[&TagKey::Label(b(Province))].fp, 1);
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn perfect_and_disjoint() {
        let g = [b(Name), BioLabel::inside(Name), b(PostalCode)];
        assert_eq!(one(&g, &g, &ScoreOptions::default()).macro_f1, 1.0);
        assert_eq!(one(&g, &[b(Unit), b(Unit), b(Ooa)], &ScoreOptions::default()).macro_f1, 0.0);
    }

    #[test]
    fn unresolved_counts_as_miss() {
        let gold = [b(Name), b(HardSep)];
        let pred = [Some(b(Name)), None];
        let r = score(vec![("s", &gold[..], &pred[..])], &ScoreOptions::default()).unwrap();
        assert_eq!(r.unresolved, 1);
        assert_eq!(r.per_tag[&TagKey::Label(b(HardSep))].fn_, 1);
        assert_eq!(r.macro_f1, 0.5);
        let excl = ScoreOptions { exclude: [HardSep].into(), ..Default::default() };
        assert_eq!(score(vec![("s", &gold[..], &pred[..])], &excl).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn prediction_records() {
        let line = prediction_to_json("a", Some(&["x".to_string(), "y".to_string()]), &[Some(b(Name)), None]);
        let (id, labels) = parse_prediction_record(&line, "p", 1).unwrap().unwrap();
        assert_eq!((id.as_str(), labels), ("a", vec![Some(b(Name)), None]));
        assert!(parse_prediction_record(r#"{"id":"a","address":"x y","tags":["B-Name"]}"#, "p", 3).is_err());
        let err = parse_prediction_record(r#"{"id":"a","tags":["B-Nope"]}"#, "p.jsonl", 7).unwrap_err();
        assert!(err.to_string().starts_with("p.jsonl:7:"), "{err}");
        let dup = format!("{line}\n{line}\n");
        assert!(read_predictions(dup.as_bytes(), "p").is_err());
        let gold = crate::ingest::Corpus::new(
            vec![crate::schema::Sample::new("a", vec!["x".into(), "y".into()], vec![b(Name), b(Unit)], None).unwrap()],
            "g",
        );
        let preds = read_predictions(line.as_bytes(), "p").unwrap();
        assert_eq!(score_corpus(&gold, &preds, &ScoreOptions::default()).unwrap().macro_f1, 0.5);
        assert!(matches!(score_corpus(&gold, &BTreeMap::new(), &ScoreOptions::default()), Err(EvalError::MissingPrediction(_))));
    }

    #[test]
    fn micro_average() {
        let opts = ScoreOptions { average: Average::Micro, ..Default::default() };
        let r = one(&[b(Name), b(Country), b(Unit), b(Unit)], &[b(Name), b(Province), b(Unit), b(Unit)], &opts);
        assert!((r.macro_f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_names_sample() {
        let err = score_labels(&["abc"], &[vec![b(Name)]], &[vec![]], &ScoreOptions::default()).unwrap_err();
        assert!(err.to_string().contains("abc"));
    }

    #[test]
    fn fold_aggregation() {
        let mk = |f| EvalReport {
            per_tag: BTreeMap::new(),
            macro_f1: f,
            token_count: 0,
            unresolved: 0,
            options: ScoreOptions::default(),
        };
        let s = aggregate_folds(vec![mk(0.8), mk(0.9)]).unwrap();
        assert!((s.mean_macro_f1 - 0.85).abs() < 1e-12);
        assert!((s.std_macro_f1 - 0.05).abs() < 1e-12);
        assert_eq!(render_std(s.std_macro_f1), "50.0");
        let same = aggregate_folds(vec![mk(0.7), mk(0.7), mk(0.7)]).unwrap();
        assert_eq!(same.std_macro_f1, 0.0);
        let single = aggregate_folds(vec![mk(0.7)]).unwrap();
        assert!(single.single_fold && single.std_macro_f1 == 0.0);
        assert!(matches!(aggregate_folds(vec![]), Err(EvalError::EmptyFolds)));
        assert_eq!(render_std(0.001234), "1.234");
        assert_eq!(render_std(0.0), "0.0");

        let row = ReportRow { model: "tagger".into(), data_version: "v2".into(), split: "test".into(), summary: s };
        let csv = render_report(std::slice::from_ref(&row), ReportFormat::Csv);
        let parsed = parse_csv_report(&csv).unwrap();
        assert_eq!(parsed, vec![cells(&row)]);
        assert_eq!(parsed[0][4], "50.0");
        let text = String::from_utf8(render_report(std::slice::from_ref(&row), ReportFormat::Text)).unwrap();
        assert!(text.lines().next().unwrap().contains("std (×10³)"));
        let json = String::from_utf8(render_report(&[row], ReportFormat::Jsonl)).unwrap();
        let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
        assert_eq!(v["mean"], "0.8500");
    }

    fn label_pairs() -> impl Strategy<Value = (Vec<Vec<BioLabel>>, Vec<Vec<BioLabel>>)> {
        let labels = prop::sample::subsequence(BioLabel::all().collect::<Vec<_>>(), 1..=10);
        (labels, prop::collection::vec(0..=50usize, 1..5)).prop_flat_map(|(labels, lens)| {
            let seqs = |labels: Vec<BioLabel>, lens: Vec<usize>| {
                lens.into_iter()
                    .map(|n| prop::collection::vec(prop::sample::select(labels.clone()), n))
                    .collect::<Vec<_>>()
            };
            (seqs(labels.clone(), lens.clone()), seqs(labels, lens))
        })
    }

    proptest! {
        #[test]
        fn matches_oracle((gold, pred) in label_pairs()) {
            let ids: Vec<String> = (0..gold.len()).map(|i| i.to_string()).collect();
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            let r = score_labels(&ids, &gold, &pred, &ScoreOptions::default()).unwrap();
            let (o, macro_f1) = oracle(&gold, &pred);
            prop_assert!((r.macro_f1 - macro_f1).abs() <= 1e-12);
            prop_assert_eq!(r.per_tag.len(), o.len());
            for (l, (p, rc, f)) in o {
                let m = r.per_tag[&TagKey::Label(l)];
                prop_assert!((m.precision - p).abs() <= 1e-12 && (m.recall - rc).abs() <= 1e-12 && (m.f1 - f).abs() <= 1e-12);
            }
            let support: usize = r.per_tag.values().map(|m| m.support).sum();
            prop_assert_eq!(support, r.token_count);
        }

        #[test]
        fn permutation_invariant((gold, pred) in label_pairs()) {
            let ids = vec!["x"; gold.len()];
            let a = score_labels(&ids, &gold, &pred, &ScoreOptions::default()).unwrap();
            let (mut g2, mut p2) = (gold.clone(), pred.clone());
            g2.reverse();
            p2.reverse();
            let b = score_labels(&ids, &g2, &p2, &ScoreOptions::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn correcting_a_token_never_hurts((gold, pred) in label_pairs(), pick in any::<prop::sample::Index>()) {
            let positions: Vec<(usize, usize)> = gold.iter().enumerate()
                .flat_map(|(i, g)| (0..g.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| gold[i][j] != pred[i][j])
                .collect();
            prop_assume!(!positions.is_empty());
            let (i, j) = positions[pick.index(positions.len())];
            let ids = vec!["x"; gold.len()];
            let before = score_labels(&ids, &gold, &pred, &ScoreOptions::default()).unwrap();
            let mut fixed = pred.clone();
            fixed[i][j] = gold[i][j];
            let after = score_labels(&ids, &gold, &fixed, &ScoreOptions::default()).unwrap();
            let key = TagKey::Label(gold[i][j]);
            prop_assert!(after.per_tag[&key].f1 >= before.per_tag[&key].f1);
        }

        #[test]
        fn strip_equals_prestripped((gold, pred) in label_pairs()) {
            let ids = vec!["x"; gold.len()];
            let strip = ScoreOptions { strip: true, ..Default::default() };
            let a = score_labels(&ids, &gold, &pred, &strip).unwrap();
            let begin = |v: &Vec<Vec<BioLabel>>| -> Vec<Vec<BioLabel>> {
                v.iter().map(|s| strip_prefix(s).into_iter().map(BioLabel::begin).collect()).collect()
            };
            let b = score_labels(&ids, &begin(&gold), &begin(&pred), &ScoreOptions::default()).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() <= 1e-12);
            for (k, m) in &a.per_tag {
                let m2 = b.per_tag[&TagKey::Label(BioLabel::begin(k.base()))];
                prop_assert_eq!((m.tp, m.fp, m.fn_), (m2.tp, m2.fp, m2.fn_));
            }
        }
    }
}
