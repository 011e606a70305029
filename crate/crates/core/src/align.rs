//! Word-to-subword label alignment for exporting training data to
//! subword-based token classifiers.
//!
//! Each word's label goes on its first piece. Continuation pieces and the
//! start/end sentinels get the literal label `UNK`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AlignError, SchemaError};
use crate::ingest::Corpus;
use crate::schema::BioLabel;

pub const UNK: &str = "UNK";

/// Splits a word into ordered pieces. Continuation pieces start with
/// [`SubwordSplitter::marker`].
pub trait SubwordSplitter: Sync {
    fn split(&self, word: &str) -> Vec<String>;

    fn marker(&self) -> &str {
        "##"
    }

    fn start_sentinel(&self) -> &str {
        "[CLS]"
    }

    fn end_sentinel(&self) -> &str {
        "[SEP]"
    }
}

/// Greedy longest-match-first WordPiece over a fixed vocabulary. Characters
/// with no vocabulary match become single-character pieces.
#[derive(Debug, Clone)]
pub struct WordPieceSplitter {
    vocab: HashSet<String>,
    max_piece_chars: usize,
}

const BUNDLED_VOCAB: &[&str] = &[
    "ki", "##rch", "##ens", "##tr", "24", "36", "##60", "gem", "##ein", "##de", "klein", "po", "##ch", "##lar",
    "##n", "ni", "##ede", "##ros", "##ter", "##re", "##ich",
];

impl WordPieceSplitter {
    pub fn new<I, S>(vocab: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocab: HashSet<String> = vocab.into_iter().map(Into::into).collect();
        let max_piece_chars = vocab
            .iter()
            .map(|p| p.strip_prefix("##").unwrap_or(p).chars().count())
            .max()
            .unwrap_or(1);
        WordPieceSplitter { vocab, max_piece_chars }
    }

    /// Small fixed vocabulary, enough for the Austrian example address.
    pub fn bundled() -> Self {
        Self::new(BUNDLED_VOCAB.iter().copied())
    }

    /// One piece per line, `##` marking continuations (BERT `vocab.txt`).
    pub fn from_vocab_file(path: &Path) -> Result<Self, AlignError> {
        let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        Ok(Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }
}

impl SubwordSplitter for WordPieceSplitter {
    fn split(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let prefix = if start == 0 { "" } else { "##" };
            let longest = (start + self.max_piece_chars).min(chars.len());
            let piece = (start + 1..=longest)
                .rev()
                .map(|end| (end, format!("{prefix}{}", chars[start..end].iter().collect::<String>())))
                .find(|(_, p)| self.vocab.contains(p))
                .unwrap_or_else(|| (start + 1, format!("{prefix}{}", chars[start])));
            start = piece.0;
            pieces.push(piece.1);
        }
        pieces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PieceLabel {
    Label(BioLabel),
    Unk,
}

impl fmt::Display for PieceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PieceLabel::Label(l) => l.fmt(f),
            PieceLabel::Unk => f.write_str(UNK),
        }
    }
}

impl FromStr for PieceLabel {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == UNK {
            Ok(PieceLabel::Unk)
        } else {
            s.parse().map(PieceLabel::Label)
        }
    }
}

impl Serialize for PieceLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PieceLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSequence {
    pub pieces: Vec<String>,
    pub labels: Vec<PieceLabel>,
}

pub fn align(words: &[String], labels: &[BioLabel], splitter: &dyn SubwordSplitter) -> Result<AlignedSequence, AlignError> {
    if words.len() != labels.len() {
        return Err(AlignError::LengthMismatch { words: words.len(), labels: labels.len() });
    }
    let marker = splitter.marker();
    let mut pieces = vec![splitter.start_sentinel().to_string()];
    let mut out = vec![PieceLabel::Unk];
    for (word, label) in words.iter().zip(labels) {
        let split = splitter.split(word);
        let rebuilt: Option<String> = split
            .iter()
            .enumerate()
            .map(|(i, p)| if i == 0 { (!p.starts_with(marker)).then_some(p.as_str()) } else { p.strip_prefix(marker) })
            .collect();
        if split.is_empty() || rebuilt.as_deref() != Some(word.as_str()) {
            return Err(AlignError::SplitterRoundtrip { word: word.clone(), pieces: split });
        }
        out.push(PieceLabel::Label(*label));
        out.extend(std::iter::repeat_n(PieceLabel::Unk, split.len() - 1));
        pieces.extend(split);
    }
    pieces.push(splitter.end_sentinel().to_string());
    out.push(PieceLabel::Unk);
    Ok(AlignedSequence { pieces, labels: out })
}

impl AlignedSequence {
    /// Reassembles words and their labels. Expects the sentinel at each end
    /// and a label on exactly the first piece of every word.
    pub fn recover(&self, marker: &str) -> Result<(Vec<String>, Vec<BioLabel>), String> {
        if self.pieces.len() != self.labels.len() {
            return Err(format!("{} pieces but {} labels", self.pieces.len(), self.labels.len()));
        }
        if self.pieces.len() < 2 || self.labels[0] != PieceLabel::Unk || self.labels[self.labels.len() - 1] != PieceLabel::Unk {
            return Err("missing sentinels".into());
        }
        let inner = 1..self.pieces.len() - 1;
        let mut words: Vec<String> = Vec::new();
        let mut labels = Vec::new();
        for (piece, label) in self.pieces[inner.clone()].iter().zip(&self.labels[inner]) {
            match (piece.strip_prefix(marker), label) {
                (None, PieceLabel::Label(l)) => {
                    words.push(piece.clone());
                    labels.push(*l);
                }
                (Some(rest), PieceLabel::Unk) if !words.is_empty() => words.last_mut().expect("non-empty").push_str(rest),
                _ => return Err(format!("piece {piece:?} labelled {label} breaks word alignment")),
            }
        }
        Ok((words, labels))
    }
}

/// Defaults for fine-tuning an external token classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperDefaults {
    pub num_train_epochs: u32,
    pub train_batch_size: u32,
    pub eval_batch_size: u32,
    pub dropout: f64,
    pub warmup_steps: u32,
    pub optimizer: String,
    pub weight_decay: f64,
    pub eval_steps: u32,
    pub early_stopping_patience: u32,
    pub seed: u64,
}

impl Default for HyperDefaults {
    fn default() -> Self {
        HyperDefaults {
            num_train_epochs: 1,
            train_batch_size: 1024,
            eval_batch_size: 1024,
            dropout: 0.1,
            warmup_steps: 500,
            optimizer: "adamw".into(),
            weight_decay: 0.01,
            eval_steps: 20,
            early_stopping_patience: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub format: String,
    pub marker: String,
    pub start_sentinel: String,
    pub end_sentinel: String,
    pub unk_label: String,
    pub sequences: usize,
}

#[derive(Serialize, Deserialize)]
struct ExportRecord {
    id: String,
    pieces: Vec<String>,
    labels: Vec<PieceLabel>,
}

pub const EXPORT_FORMAT: &str = "aligned-subwords/1";

/// Sidecar config path: `<file>.config.json` next to the export.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

/// Writes a header line, one JSON line per sample, and the sidecar config.
pub fn export_training_file(
    corpus: &Corpus,
    splitter: &dyn SubwordSplitter,
    path: &Path,
    hyper: &HyperDefaults,
) -> Result<(), AlignError> {
    let lines: Vec<String> = corpus
        .samples
        .par_iter()
        .map(|s| {
            let seq = align(&s.words, &s.labels, splitter)?;
            let rec = ExportRecord { id: s.id.clone(), pieces: seq.pieces, labels: seq.labels };
            Ok(serde_json::to_string(&rec).expect("record serializes"))
        })
        .collect::<Result<_, AlignError>>()?;
    let header = ExportHeader {
        format: EXPORT_FORMAT.into(),
        marker: splitter.marker().into(),
        start_sentinel: splitter.start_sentinel().into(),
        end_sentinel: splitter.end_sentinel().into(),
        unk_label: UNK.into(),
        sequences: lines.len(),
    };
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>, line: &str| writeln!(w, "{line}").map_err(|e| io_err(path, e));
    write(&mut w, &serde_json::to_string(&header).expect("header serializes"))?;
    for line in &lines {
        write(&mut w, line)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(hyper).expect("config serializes");
    fs::write(&side, json + "\n").map_err(|e| io_err(&side, e))
}

/// Reads an export back as `(header, [(id, sequence)])`.
pub fn read_training_file<R: BufRead>(reader: R, source_name: &str) -> Result<(ExportHeader, Vec<(String, AlignedSequence)>), AlignError> {
    let malformed = |line: usize, reason: String| AlignError::Malformed { source_name: source_name.into(), line, reason };
    let mut lines = reader.lines().enumerate();
    let header: ExportHeader = match lines.next() {
        Some((_, Ok(l))) => serde_json::from_str(&l).map_err(|e| malformed(1, format!("header: {e}")))?,
        Some((_, Err(e))) => return Err(malformed(1, e.to_string())),
        None => return Err(malformed(1, "missing header".into())),
    };
    if header.format != EXPORT_FORMAT {
        return Err(malformed(1, format!("unsupported format {:?}", header.format)));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| malformed(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExportRecord = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        let seq = AlignedSequence { pieces: rec.pieces, labels: rec.labels };
        seq.recover(&header.marker).map_err(|e| malformed(i + 1, e))?;
        out.push((rec.id, seq));
    }
    if out.len() != header.sequences {
        return Err(malformed(1, format!("header promises {} sequences, file has {}", header.sequences, out.len())));
    }
    Ok((header, out))
}

pub fn load_training_file(path: &Path) -> Result<(ExportHeader, Vec<(String, AlignedSequence)>), AlignError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_training_file(std::io::BufReader::new(file), &path.display().to_string())
}

fn io_err(path: &Path, source: std::io::Error) -> AlignError {
    AlignError::Io { path: path.display().to_string(), source }
}
