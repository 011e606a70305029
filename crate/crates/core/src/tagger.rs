//! Linear-chain sequence tagger trained as an averaged structured
//! perceptron.
//!
//! Decoding is Viterbi over emission plus transition scores. Transitions that
//! would break BIO validity (an `I-X` not preceded by `B-X`/`I-X`, or an `I-`
//! label at the start) score `-inf`, so every decoded sequence is valid.
//!
//! Training can stop early: every `eval_every_updates` training samples the
//! averaged weights are scored on a development corpus with a per-token
//! structured hinge loss (cost-augmented Viterbi score minus gold score,
//! Hamming cost). After `patience` evaluations without improvement, training
//! stops and the best checkpoint is returned.

use std::collections::HashMap;
use std::fs;
use std::hash::{BuildHasherDefault, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::TaggerError;
use crate::ingest::Corpus;
use crate::schema::{BioLabel, Prefix};
use crate::seed;

pub type FeatureId = u64;

/// Feature ids are already hashes; hashing them again is wasted work.
#[derive(Default)]
struct IdHasher(u64);

impl Hasher for IdHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) | u64::from(b);
        }
    }
    fn write_u64(&mut self, n: u64) {
        self.0 = n;
    }
}

type FeatMap<V> = HashMap<FeatureId, V, BuildHasherDefault<IdHasher>>;

/// Sorted, de-duplicated indicator feature ids for one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector(Vec<FeatureId>);

impl FeatureVector {
    pub fn ids(&self) -> &[FeatureId] {
        &self.0
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.0.binary_search(&id).is_ok()
    }
}

/// Hash of a feature template and value, e.g. `feature_id("shape", "99999")`.
pub fn feature_id(template: &str, value: &str) -> FeatureId {
    let mut key = Vec::with_capacity(template.len() + value.len() + 1);
    key.extend_from_slice(template.as_bytes());
    key.push(0x1f);
    key.extend_from_slice(value.as_bytes());
    seed::fnv1a(&key)
}

/// Letters become `x`, digits `9`, everything else is kept.
pub fn word_shape(word: &str) -> String {
    word.chars()
        .map(|c| {
            if c.is_alphabetic() {
                'x'
            } else if c.is_numeric() {
                '9'
            } else {
                c
            }
        })
        .collect()
}

fn short_shape(shape: &str) -> String {
    let mut out = String::new();
    for c in shape.chars() {
        if !out.ends_with(c) {
            out.push(c);
        }
    }
    out
}

fn affix(chars: &[char], n: usize, from_end: bool) -> Option<String> {
    (chars.len() >= n).then(|| {
        if from_end {
            chars[chars.len() - n..].iter().collect()
        } else {
            chars[..n].iter().collect()
        }
    })
}

pub fn featurize(words: &[String], position: usize) -> FeatureVector {
    let word = &words[position];
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let shape = word_shape(word);
    let n = words.len();
    let mut ids = Vec::with_capacity(32);
    let mut add = |t: &str, v: &str| ids.push(feature_id(t, v));

    add("bias", "");
    add("word", &lower);
    add("shape", &shape);
    add("short-shape", &short_shape(&shape));
    for k in 1..=3 {
        if let Some(p) = affix(&chars, k, false) {
            add(&format!("prefix{k}"), &p);
        }
        if let Some(s) = affix(&chars, k, true) {
            add(&format!("suffix{k}"), &s);
        }
    }
    if word.chars().all(|c| c.is_ascii_digit()) {
        add("all-digits", "");
    }
    if word.chars().any(|c| c.is_ascii_digit()) {
        add("has-digit", "");
    }
    if word == "$" {
        add("is-dollar", "");
    }
    if word.chars().any(char::is_alphabetic) && !word.chars().any(char::is_lowercase) {
        add("all-upper", "");
    }
    add("length", &chars.len().min(12).to_string());
    add("rel-pos", &((5 * position) / n).to_string());
    if position == 0 {
        add("first", "");
    }
    if position + 1 == n {
        add("last", "");
    }
    let neighbour = |offset: isize| -> (String, String) {
        let j = position as isize + offset;
        if j < 0 {
            ("<s>".into(), "<s>".into())
        } else if j as usize >= n {
            ("</s>".into(), "</s>".into())
        } else {
            let w = &words[j as usize];
            (w.to_lowercase(), short_shape(&word_shape(w)))
        }
    };
    for (offset, name) in [(-2, "-2"), (-1, "-1"), (1, "+1"), (2, "+2")] {
        let (w, s) = neighbour(offset);
        add(&format!("word{name}"), &w);
        add(&format!("shape{name}"), &s);
    }
    let (prev, _) = neighbour(-1);
    add("word-1|word", &format!("{prev}|{lower}"));

    ids.sort_unstable();
    ids.dedup();
    FeatureVector(ids)
}

fn featurize_all(words: &[String]) -> Vec<FeatureVector> {
    (0..words.len()).map(|i| featurize(words, i)).collect()
}

/// Which transitions are BIO-valid for a label table.
#[derive(Debug, Clone)]
struct Allowed {
    start: Vec<bool>,
    trans: Vec<bool>,
}

impl Allowed {
    fn new(labels: &[BioLabel]) -> Self {
        let n = labels.len();
        let start = labels.iter().map(|l| l.can_follow(None)).collect();
        let mut trans = vec![false; n * n];
        for (p, &prev) in labels.iter().enumerate() {
            for (q, &next) in labels.iter().enumerate() {
                trans[p * n + q] = next.can_follow(Some(prev));
            }
        }
        Allowed { start, trans }
    }
}

trait Scores {
    fn n_labels(&self) -> usize;
    fn emissions(&self, feats: &FeatureVector, out: &mut [f64]);
    fn start(&self, l: usize) -> f64;
    fn trans(&self, p: usize, q: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    n: usize,
    emit: FeatMap<Vec<f64>>,
    start: Vec<f64>,
    trans: Vec<f64>,
}

impl Params {
    fn zeros(n: usize) -> Self {
        Params { n, emit: FeatMap::default(), start: vec![0.0; n], trans: vec![0.0; n * n] }
    }
}

impl Scores for Params {
    fn n_labels(&self) -> usize {
        self.n
    }
    fn emissions(&self, feats: &FeatureVector, out: &mut [f64]) {
        out.fill(0.0);
        for f in feats.ids() {
            if let Some(w) = self.emit.get(f) {
                for (o, x) in out.iter_mut().zip(w) {
                    *o += x;
                }
            }
        }
    }
    fn start(&self, l: usize) -> f64 {
        self.start[l]
    }
    fn trans(&self, p: usize, q: usize) -> f64 {
        self.trans[p * self.n + q]
    }
}

/// Averaged weights `current - accumulated / count`, computed on access.
struct Averaged<'a> {
    current: &'a Params,
    acc: &'a Params,
    count: f64,
}

impl Scores for Averaged<'_> {
    fn n_labels(&self) -> usize {
        self.current.n
    }
    fn emissions(&self, feats: &FeatureVector, out: &mut [f64]) {
        out.fill(0.0);
        for f in feats.ids() {
            if let (Some(w), Some(u)) = (self.current.emit.get(f), self.acc.emit.get(f)) {
                for ((o, x), y) in out.iter_mut().zip(w).zip(u) {
                    *o += x - y / self.count;
                }
            }
        }
    }
    fn start(&self, l: usize) -> f64 {
        self.current.start[l] - self.acc.start[l] / self.count
    }
    fn trans(&self, p: usize, q: usize) -> f64 {
        let i = p * self.current.n + q;
        self.current.trans[i] - self.acc.trans[i] / self.count
    }
}

impl Averaged<'_> {
    fn materialize(&self) -> Params {
        let n = self.current.n;
        let emit = self
            .current
            .emit
            .iter()
            .filter_map(|(f, w)| {
                let u = &self.acc.emit[f];
                let avg: Vec<f64> = w.iter().zip(u).map(|(x, y)| x - y / self.count).collect();
                avg.iter().any(|v| *v != 0.0).then_some((*f, avg))
            })
            .collect();
        Params {
            n,
            emit,
            start: (0..n).map(|l| self.start(l)).collect(),
            trans: (0..n * n).map(|i| self.trans(i / n, i % n)).collect(),
        }
    }
}

/// Best path under `scores`; with `gold`, every label other than the gold
/// one gets +1 (Hamming cost augmentation). Returns the path and its score.
fn viterbi<S: Scores>(scores: &S, allowed: &Allowed, feats: &[FeatureVector], gold: Option<&[usize]>) -> (Vec<usize>, f64) {
    let n = scores.n_labels();
    let len = feats.len();
    if len == 0 {
        return (Vec::new(), 0.0);
    }
    let mut emit = vec![0.0; n];
    let mut delta = vec![f64::NEG_INFINITY; n];
    let mut next = vec![f64::NEG_INFINITY; n];
    let mut back = vec![0usize; len * n];
    let cost = |t: usize, l: usize| gold.map_or(0.0, |g| if g[t] == l { 0.0 } else { 1.0 });

    scores.emissions(&feats[0], &mut emit);
    for l in 0..n {
        if allowed.start[l] {
            delta[l] = scores.start(l) + emit[l] + cost(0, l);
        }
    }
    for t in 1..len {
        scores.emissions(&feats[t], &mut emit);
        for q in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (p, &d) in delta.iter().enumerate() {
                if !allowed.trans[p * n + q] || d == f64::NEG_INFINITY {
                    continue;
                }
                let s = d + scores.trans(p, q);
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next[q] = if best == f64::NEG_INFINITY { best } else { best + emit[q] + cost(t, q) };
            back[t * n + q] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let (mut last, mut best) = (0, f64::NEG_INFINITY);
    for (l, &d) in delta.iter().enumerate() {
        if d > best {
            best = d;
            last = l;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * n + path[t]];
    }
    (path, best)
}

fn path_score<S: Scores>(scores: &S, feats: &[FeatureVector], path: &[usize]) -> f64 {
    let mut emit = vec![0.0; scores.n_labels()];
    let mut total = 0.0;
    for (t, &l) in path.iter().enumerate() {
        scores.emissions(&feats[t], &mut emit);
        total += emit[l] + if t == 0 { scores.start(l) } else { scores.trans(path[t - 1], l) };
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Training samples between development-loss evaluations.
    pub eval_every_updates: usize,
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub shuffle: bool,
    /// Hard cap on training samples processed, across epochs.
    pub max_steps: Option<usize>,
    /// Free-text tag recorded in the model metadata (e.g. `v2`).
    pub train_version: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 1,
            eval_every_updates: 20,
            patience: 5,
            seed: 42,
            learning_rate: 1.0,
            shuffle: true,
            max_steps: None,
            train_version: String::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.patience < 1 {
            return Err(TaggerError::InvalidConfig("patience must be at least 1".into()));
        }
        if self.eval_every_updates < 1 {
            return Err(TaggerError::InvalidConfig("evaluation interval must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TaggerError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train_version: String,
    pub seed: u64,
    pub steps_run: usize,
    pub early_stopped: bool,
    /// Training step of the returned checkpoint.
    pub best_step: usize,
    pub best_dev_loss: f64,
    /// `(step, dev loss)` for every evaluation.
    pub eval_history: Vec<(usize, f64)>,
}

/// Trained tagger: label table, emission weights, BIO-constrained
/// transitions and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    labels: Vec<BioLabel>,
    allowed: Allowed,
    params: Params,
    pub meta: ModelMeta,
}

impl PartialEq for Allowed {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start && self.trans == other.trans
    }
}

impl TaggerModel {
    /// Builds a model from raw parts. Disallowed transitions are forced to
    /// `-inf` whatever value is passed.
    pub fn from_parts(
        labels: Vec<BioLabel>,
        weights: impl IntoIterator<Item = (FeatureId, BioLabel, f64)>,
        start: Vec<f64>,
        transitions: Vec<f64>,
    ) -> Result<Self, TaggerError> {
        let n = labels.len();
        check_label_table(&labels)?;
        if start.len() != n || transitions.len() != n * n {
            return Err(TaggerError::InvalidConfig("transition table size does not match labels".into()));
        }
        let index: HashMap<BioLabel, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let mut params = Params::zeros(n);
        for (f, label, w) in weights {
            let &l = index
                .get(&label)
                .ok_or_else(|| TaggerError::InvalidConfig(format!("weight for unknown label {label}")))?;
            params.emit.entry(f).or_insert_with(|| vec![0.0; n])[l] = w;
        }
        params.start = start;
        params.trans = transitions;
        let allowed = Allowed::new(&labels);
        apply_mask(&mut params, &allowed);
        Ok(TaggerModel { labels, allowed, params, meta: ModelMeta::default() })
    }

    pub fn labels(&self) -> &[BioLabel] {
        &self.labels
    }

    /// Transition score from `prev` to `next`; `None` for labels outside the
    /// model.
    pub fn transition_score(&self, prev: BioLabel, next: BioLabel) -> Option<f64> {
        let p = self.labels.iter().position(|l| *l == prev)?;
        let q = self.labels.iter().position(|l| *l == next)?;
        Some(self.params.trans[p * self.labels.len() + q])
    }

    pub fn predict(&self, words: &[String]) -> Vec<BioLabel> {
        let feats = featurize_all(words);
        let (path, _) = viterbi(&self.params, &self.allowed, &feats, None);
        path.into_iter().map(|l| self.labels[l]).collect()
    }

    pub fn predict_corpus(&self, corpus: &Corpus) -> Vec<Vec<BioLabel>> {
        use rayon::prelude::*;
        corpus.samples.par_iter().map(|s| self.predict(&s.words)).collect()
    }

    /// Mean per-token structured hinge loss on `corpus`.
    pub fn hinge_loss(&self, corpus: &Corpus) -> Result<f64, TaggerError> {
        let prepared = prepare(corpus, &self.labels)?;
        Ok(hinge_loss(&self.params, &self.allowed, &prepared))
    }
}

fn check_label_table(labels: &[BioLabel]) -> Result<(), TaggerError> {
    if !labels.iter().any(|l| l.prefix == Prefix::B) {
        return Err(TaggerError::InvalidConfig("label table needs at least one B- label".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if !labels.iter().all(|l| seen.insert(*l)) {
        return Err(TaggerError::InvalidConfig("duplicate label in label table".into()));
    }
    Ok(())
}

fn apply_mask(params: &mut Params, allowed: &Allowed) {
    for (s, ok) in params.start.iter_mut().zip(&allowed.start) {
        if !ok {
            *s = f64::NEG_INFINITY;
        }
    }
    for (s, ok) in params.trans.iter_mut().zip(&allowed.trans) {
        if !ok {
            *s = f64::NEG_INFINITY;
        }
    }
}

struct Prepared {
    feats: Vec<FeatureVector>,
    gold: Vec<usize>,
}

fn prepare(corpus: &Corpus, labels: &[BioLabel]) -> Result<Vec<Prepared>, TaggerError> {
    use rayon::prelude::*;
    let index: HashMap<BioLabel, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    corpus
        .samples
        .par_iter()
        .map(|s| {
            let gold = s
                .labels
                .iter()
                .map(|l| {
                    index.get(l).copied().ok_or_else(|| TaggerError::LabelOutsideModel {
                        id: s.id.clone(),
                        label: l.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Prepared { feats: featurize_all(&s.words), gold })
        })
        .collect()
}

fn hinge_loss<S: Scores + Sync>(scores: &S, allowed: &Allowed, dev: &[Prepared]) -> f64 {
    use rayon::prelude::*;
    let (loss, tokens) = dev
        .par_iter()
        .map(|p| {
            let (_, augmented) = viterbi(scores, allowed, &p.feats, Some(&p.gold));
            let gold = path_score(scores, &p.feats, &p.gold);
            (augmented - gold, p.gold.len())
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if tokens == 0 {
        0.0
    } else {
        loss / tokens as f64
    }
}

/// The averaged model at an evaluation point, handed to a custom
/// development-loss function.
pub struct ModelView<'a> {
    scores: Averaged<'a>,
    allowed: &'a Allowed,
    dev: &'a [Prepared],
}

impl ModelView<'_> {
    /// Mean per-token structured hinge loss on the development corpus.
    pub fn dev_hinge_loss(&self) -> f64 {
        hinge_loss(&self.scores, self.allowed, self.dev)
    }
}

/// Trains on `train`, early-stopping on the hinge loss over `dev`.
pub fn train(train: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<TaggerModel, TaggerError> {
    train_with_dev_loss(train, dev, cfg, |view: &ModelView<'_>, _step: usize| view.dev_hinge_loss())
}

/// Like [`train`], with the development loss supplied by `dev_loss(view, step)`.
pub fn train_with_dev_loss<F>(train: &Corpus, dev: &Corpus, cfg: &TrainConfig, mut dev_loss: F) -> Result<TaggerModel, TaggerError>
where
    F: FnMut(&ModelView<'_>, usize) -> f64,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(TaggerError::EmptyCorpus("training"));
    }
    if dev.is_empty() {
        return Err(TaggerError::EmptyCorpus("development"));
    }
    // Dev-only labels get rows too so the zero-shot loss stays defined.
    let mut labels: Vec<BioLabel> =
        train.samples.iter().chain(&dev.samples).flat_map(|s| s.labels.iter().copied()).collect();
    labels.sort();
    labels.dedup();
    check_label_table(&labels)?;
    let n = labels.len();
    let allowed = Allowed::new(&labels);
    let train_set = prepare(train, &labels)?;
    let dev_set = prepare(dev, &labels)?;

    let mut current = Params::zeros(n);
    let mut acc = Params::zeros(n);
    let mut count = 1.0f64;
    let lr = cfg.learning_rate;

    let mut meta = ModelMeta {
        train_version: cfg.train_version.clone(),
        seed: cfg.seed,
        best_dev_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best: Option<Params> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut last_eval = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut evaluate = |step: usize, current: &Params, acc: &Params, count: f64, meta: &mut ModelMeta, best: &mut Option<Params>, stale: &mut usize| {
        let scores = Averaged { current, acc, count };
        let view = ModelView { scores, allowed: &allowed, dev: &dev_set };
        let loss = dev_loss(&view, step);
        meta.eval_history.push((step, loss));
        if loss < meta.best_dev_loss || best.is_none() {
            meta.best_dev_loss = loss;
            meta.best_step = step;
            *best = Some(view.scores.materialize());
            *stale = 0;
        } else {
            *stale += 1;
        }
    };

    'epochs: for epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut seed::stream(cfg.seed, &format!("epoch:{epoch}")));
        }
        for &i in &order {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let sample = &train_set[i];
            let (pred, _) = viterbi(&current, &allowed, &sample.feats, None);
            if pred != sample.gold {
                perceptron_update(&mut current, &mut acc, sample, &pred, lr, count);
            }
            count += 1.0;
            step += 1;
            if step.is_multiple_of(cfg.eval_every_updates) {
                last_eval = step;
                evaluate(step, &current, &acc, count, &mut meta, &mut best, &mut stale);
                if stale >= cfg.patience {
                    meta.early_stopped = true;
                    break 'epochs;
                }
            }
        }
    }
    if last_eval != step || best.is_none() {
        evaluate(step, &current, &acc, count, &mut meta, &mut best, &mut stale);
    }
    meta.steps_run = step;
    let mut params = best.expect("at least one evaluation ran");
    apply_mask(&mut params, &allowed);
    Ok(TaggerModel { labels, allowed, params, meta })
}

fn perceptron_update(current: &mut Params, acc: &mut Params, sample: &Prepared, pred: &[usize], lr: f64, count: f64) {
    let n = current.n;
    let bump = |params: &mut Params, scale: f64| {
        for (t, feats) in sample.feats.iter().enumerate() {
            let (g, p) = (sample.gold[t], pred[t]);
            if g != p {
                for f in feats.ids() {
                    let w = params.emit.entry(*f).or_insert_with(|| vec![0.0; n]);
                    w[g] += scale;
                    w[p] -= scale;
                }
            }
            if t == 0 {
                params.start[g] += scale;
                params.start[p] -= scale;
            } else {
                params.trans[sample.gold[t - 1] * n + g] += scale;
                params.trans[pred[t - 1] * n + p] -= scale;
            }
        }
    };
    bump(current, lr);
    bump(acc, lr * count);
}

const MAGIC: &[u8; 8] = b"NADDRTAG";
pub const FORMAT_VERSION: u32 = 1;

impl TaggerModel {
    /// Binary model encoding; integers and floats little-endian.
    ///
    /// ```text
    /// magic "NADDRTAG" | u32 version | u32 meta_len | meta JSON
    /// u32 n_labels | n x (u8 len | label utf-8)
    /// n x f64 start | n*n x f64 transitions (row = previous label)
    /// u64 n_weights | n_weights x (u64 feature | u32 label | f64 weight), sorted
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for l in &self.labels {
            let s = l.to_string();
            out.push(s.len() as u8);
            out.extend_from_slice(s.as_bytes());
        }
        for v in self.params.start.iter().chain(&self.params.trans) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut triples: Vec<(u64, u32, f64)> = self
            .params
            .emit
            .iter()
            .flat_map(|(f, w)| w.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(l, v)| (*f, l as u32, *v)))
            .collect();
        triples.sort_by_key(|t| (t.0, t.1));
        out.extend_from_slice(&(triples.len() as u64).to_le_bytes());
        for (f, l, w) in triples {
            out.extend_from_slice(&f.to_le_bytes());
            out.extend_from_slice(&l.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TaggerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(corrupt("bad magic header"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(TaggerError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let meta_len = r.u32()? as usize;
        let meta: ModelMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(&format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        if n == 0 || n > BioLabel::COUNT {
            return Err(corrupt("label count out of range"));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.take(1)?[0] as usize;
            let text = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("label is not UTF-8"))?;
            labels.push(text.parse::<BioLabel>().map_err(|_| corrupt(&format!("unknown label {text:?}")))?);
        }
        check_label_table(&labels).map_err(|e| corrupt(&e.to_string()))?;
        let allowed = Allowed::new(&labels);
        let mut params = Params::zeros(n);
        for i in 0..n {
            params.start[i] = r.f64()?;
        }
        for i in 0..n * n {
            params.trans[i] = r.f64()?;
        }
        for (v, ok) in params.start.iter().zip(&allowed.start).chain(params.trans.iter().zip(&allowed.trans)) {
            let valid = if *ok { v.is_finite() } else { *v == f64::NEG_INFINITY };
            if !valid {
                return Err(corrupt("transition table violates BIO constraints"));
            }
        }
        let count = r.u64()?;
        if count > (r.remaining() / 20) as u64 {
            return Err(corrupt("weight count exceeds file size"));
        }
        let mut prev: Option<(u64, u32)> = None;
        for _ in 0..count {
            let (f, l, w) = (r.u64()?, r.u32()?, r.f64()?);
            if prev.is_some_and(|p| p >= (f, l)) {
                return Err(corrupt("weights are not strictly sorted"));
            }
            if l as usize >= n || !w.is_finite() {
                return Err(corrupt("weight entry out of range"));
            }
            params.emit.entry(f).or_insert_with(|| vec![0.0; n])[l as usize] = w;
            prev = Some((f, l));
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(TaggerModel { labels, allowed, params, meta })
    }
}

fn corrupt(msg: &str) -> TaggerError {
    TaggerError::CorruptFile(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaggerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, TaggerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, TaggerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, TaggerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn save_model(model: &TaggerModel, path: &Path) -> Result<(), TaggerError> {
    fs::write(path, model.to_bytes()).map_err(|source| TaggerError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<TaggerModel, TaggerError> {
    let bytes = fs::read(path).map_err(|source| TaggerError::Io { path: path.display().to_string(), source })?;
    TaggerModel::from_bytes(&bytes)
}
