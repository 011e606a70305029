//! Generative parsing with an instruction-tuned completion model.
//!
//! Words are prefixed with their index (`[i]-word`) and sent in a fixed
//! prompt. The model answers with a JSON object mapping tag names to
//! indexed words. [`parse_output`] repairs the common failure modes
//! (corrupted indices, nested objects, invented tags or tokens, a word
//! claimed twice) and reports every repair it made.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::LlmError;
use crate::eval::{self, ScoreOptions};
use crate::ingest::Corpus;
use crate::schema::{BaseTag, BioLabel};

pub const PROMPT_TEMPLATE: &str = include_str!("../data/prompt_template.txt");
pub const TEMPLATE_ID: &str = "indexed-word-classifier/1";

/// Tags the model may answer with, in priority order for conflicting claims.
/// The first eight are the keys the prompt asks for.
pub const TAG_PRIORITY: [BaseTag; 11] = [
    BaseTag::Name,
    BaseTag::StreetNumber,
    BaseTag::StreetName,
    BaseTag::Municipality,
    BaseTag::PostalCode,
    BaseTag::Unit,
    BaseTag::Country,
    BaseTag::CountryCode,
    BaseTag::Province,
    BaseTag::Ooa,
    BaseTag::HardSep,
];

fn vocab_tag(key: &str) -> Option<BaseTag> {
    TAG_PRIORITY.iter().copied().find(|t| t.as_str() == key)
}

fn priority(tag: BaseTag) -> usize {
    TAG_PRIORITY.iter().position(|t| *t == tag).expect("all tags ranked")
}

/// Sampling parameters. At most one of `min_p` and `top_p` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

impl GenParams {
    pub fn new(temperature: f64, min_p: Option<f64>, top_p: Option<f64>) -> Result<Self, LlmError> {
        let p = GenParams { temperature, min_p, top_p };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(LlmError::InvalidParams(format!("temperature {} outside (0, 2]", self.temperature)));
        }
        for (name, v) in [("min_p", self.min_p), ("top_p", self.top_p)] {
            if let Some(v) = v {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(LlmError::InvalidParams(format!("{name} {v} outside (0, 1]")));
                }
            }
        }
        if self.min_p.is_some() && self.top_p.is_some() {
            return Err(LlmError::InvalidParams("min_p and top_p are mutually exclusive".into()));
        }
        Ok(())
    }
}

impl FromStr for GenParams {
    type Err = LlmError;

    /// `temperature=0.2,min_p=0.1`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| LlmError::InvalidParams(m);
        let (mut temperature, mut min_p, mut top_p) = (None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| bad(format!("{k}: not a number: {v:?}")))?;
            let slot = match k.trim() {
                "temperature" => &mut temperature,
                "min_p" => &mut min_p,
                "top_p" => &mut top_p,
                other => return Err(bad(format!("unknown parameter {other:?}"))),
            };
            if slot.replace(v).is_some() {
                return Err(bad(format!("{k} given twice")));
            }
        }
        let temperature = temperature.ok_or_else(|| bad("temperature is required".into()))?;
        GenParams::new(temperature, min_p, top_p)
    }
}

impl fmt::Display for GenParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "temperature={}", self.temperature)?;
        if let Some(p) = self.min_p {
            write!(f, ",min_p={p}")?;
        }
        if let Some(p) = self.top_p {
            write!(f, ",top_p={p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRequest {
    pub template_id: String,
    /// `[0]-w0 [1]-w1 ...`
    pub indexed_text: String,
    /// The full rendered prompt.
    pub prompt: String,
}

pub fn index_words<S: AsRef<str>>(words: &[S]) -> String {
    let parts: Vec<String> = words.iter().enumerate().map(|(i, w)| format!("[{i}]-{}", w.as_ref())).collect();
    parts.join(" ")
}

/// Renders the prompt for `words`. The indexed text goes in double quotes,
/// like the worked example inside the prompt.
pub fn build_prompt<S: AsRef<str>>(words: &[S]) -> PromptRequest {
    let indexed_text = index_words(words);
    let prompt = PROMPT_TEMPLATE.replace("{address}", &format!("\"{indexed_text}\""));
    PromptRequest { template_id: TEMPLATE_ID.into(), indexed_text, prompt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairKind {
    IndexCorruptedRecovered,
    AmbiguousFailure,
    InventedTagDropped,
    InventedTokenDropped,
    NestedFlattened,
    DuplicateClassResolved,
    FormatFailure,
}

impl fmt::Display for RepairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub kind: RepairKind,
    pub detail: String,
    /// Word position the repair concerns, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLlmOutput {
    /// One entry per input word; `None` when unresolved.
    pub labels: Vec<Option<BioLabel>>,
    pub repair_log: Vec<Repair>,
}

impl ParsedLlmOutput {
    pub fn has(&self, kind: RepairKind) -> bool {
        self.repair_log.iter().any(|r| r.kind == kind)
    }
}

/// First `{...}` span with balanced braces (outside strings) that parses as
/// a JSON object.
fn first_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = raw.as_bytes();
    for start in raw.match_indices('{').map(|(i, _)| i) {
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (off, &b) in bytes[start..].iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(m)) = serde_json::from_str(&raw[start..=start + off]) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    None
}

fn collect_values(
    obj: &serde_json::Map<String, Value>,
    path: &str,
    out: &mut Vec<(BaseTag, String)>,
    log: &mut Vec<Repair>,
) {
    for (key, value) in obj {
        let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let tag = vocab_tag(key);
        let text = match value {
            Value::Object(inner) => {
                collect_values(inner, &here, out, log);
                continue;
            }
            Value::Null => continue,
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(String::from).unwrap_or_else(|| v.to_string()))
                .collect::<Vec<_>>()
                .join(" "),
            other => other.to_string(),
        };
        match tag {
            Some(t) => {
                if !path.is_empty() {
                    log.push(Repair {
                        kind: RepairKind::NestedFlattened,
                        detail: format!("took {here} as {}", t.as_str()),
                        word: None,
                    });
                }
                out.push((t, text));
            }
            None => log.push(Repair {
                kind: RepairKind::InventedTagDropped,
                detail: format!("dropped key {here:?} with value {text:?}"),
                word: None,
            }),
        }
    }
}

/// `[i]-word` -> `(Some(i), word)`; anything else -> `(None, token)`.
fn split_indexed(token: &str) -> (Option<usize>, &str) {
    if let Some(rest) = token.strip_prefix('[') {
        if let Some((idx, word)) = rest.split_once("]-") {
            if let Ok(i) = idx.parse() {
                return (Some(i), word);
            }
        }
    }
    (None, token)
}

/// Maps a raw completion back onto `words`.
pub fn parse_output<S: AsRef<str>>(raw: &str, words: &[S]) -> ParsedLlmOutput {
    let words: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
    let n = words.len();
    let mut log = Vec::new();
    let Some(obj) = first_object(raw) else {
        log.push(Repair {
            kind: RepairKind::FormatFailure,
            detail: "no JSON object in output".into(),
            word: None,
        });
        return ParsedLlmOutput { labels: vec![None; n], repair_log: log };
    };

    let mut values = Vec::new();
    collect_values(&obj, "", &mut values, &mut log);

    let mut claims: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (tag, text) in &values {
        for token in text.split_whitespace() {
            let (idx, word) = split_indexed(token);
            if let Some(i) = idx.filter(|&i| i < n && words[i] == word) {
                claims[i].insert(priority(*tag));
                continue;
            }
            let hits: Vec<usize> = (0..n).filter(|&i| words[i] == word).collect();
            match hits.as_slice() {
                [i] => {
                    log.push(Repair {
                        kind: RepairKind::IndexCorruptedRecovered,
                        detail: format!("{token:?} under {} placed at {i}", tag.as_str()),
                        word: Some(*i),
                    });
                    claims[*i].insert(priority(*tag));
                }
                [] => log.push(Repair {
                    kind: RepairKind::InventedTokenDropped,
                    detail: format!("{token:?} under {} is not in the input", tag.as_str()),
                    word: idx.filter(|&i| i < n),
                }),
                many => log.push(Repair {
                    kind: RepairKind::AmbiguousFailure,
                    detail: format!("{token:?} under {} matches positions {many:?}", tag.as_str()),
                    word: idx.filter(|&i| i < n),
                }),
            }
        }
    }

    let mut tags: Vec<Option<BaseTag>> = vec![None; n];
    for (i, c) in claims.iter().enumerate() {
        if let Some(&best) = c.first() {
            tags[i] = Some(TAG_PRIORITY[best]);
            if c.len() > 1 {
                let names: Vec<&str> = c.iter().map(|&p| TAG_PRIORITY[p].as_str()).collect();
                log.push(Repair {
                    kind: RepairKind::DuplicateClassResolved,
                    detail: format!("word {i} claimed by {names:?}; kept {}", TAG_PRIORITY[best].as_str()),
                    word: Some(i),
                });
            }
        }
    }
    let labels = (0..n)
        .map(|i| {
            tags[i].map(|t| {
                if i > 0 && tags[i - 1] == Some(t) {
                    BioLabel::inside(t)
                } else {
                    BioLabel::begin(t)
                }
            })
        })
        .collect();
    ParsedLlmOutput { labels, repair_log: log }
}

/// Renders gold labels the way a perfectly compliant model would answer.
pub fn render_expected<S: AsRef<str>>(words: &[S], labels: &[BioLabel]) -> String {
    let mut parts = Vec::new();
    for tag in TAG_PRIORITY {
        let picked: Vec<String> = words
            .iter()
            .zip(labels)
            .enumerate()
            .filter(|(_, (_, l))| l.base == tag)
            .map(|(i, (w, _))| format!("[{i}]-{}", w.as_ref()))
            .collect();
        if !picked.is_empty() {
            let key = serde_json::to_string(tag.as_str()).expect("json");
            let value = serde_json::to_string(&picked.join(" ")).expect("json");
            parts.push(format!("{key}: {value}"));
        }
    }
    format!("{{{}}}", parts.join(", "))
}

/// Text-in, text-out completion call.
pub trait CompletionBackend: Sync {
    fn complete(&self, request: &PromptRequest, params: &GenParams) -> Result<String, LlmError>;

    /// Opaque model label used in reports and fixture keys.
    fn model(&self) -> &str;
}

/// Stable hash of everything that determines a completion.
pub fn request_key(model: &str, request: &PromptRequest, params: &GenParams) -> String {
    let mut h = Sha256::new();
    for part in [model, &request.template_id, &params.to_string(), &request.prompt] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Recorded completions, one `<request key>.txt` file each.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
    model: String,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>, model: impl Into<String>) -> Self {
        FixtureStore { dir: dir.into(), model: model.into() }
    }

    pub fn path_for(&self, request: &PromptRequest, params: &GenParams) -> PathBuf {
        self.dir.join(format!("{}.txt", request_key(&self.model, request, params)))
    }

    pub fn record(&self, request: &PromptRequest, params: &GenParams, raw: &str) -> Result<PathBuf, LlmError> {
        fs::create_dir_all(&self.dir).map_err(|source| LlmError::Io { path: self.dir.display().to_string(), source })?;
        let path = self.path_for(request, params);
        fs::write(&path, raw).map_err(|source| LlmError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }
}

impl CompletionBackend for FixtureStore {
    fn complete(&self, request: &PromptRequest, params: &GenParams) -> Result<String, LlmError> {
        params.validate()?;
        let path = self.path_for(request, params);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(LlmError::FixtureMissing {
                key: request_key(&self.model, request, params),
                dir: self.dir.display().to_string(),
            }),
            Err(source) => Err(LlmError::Io { path: path.display().to_string(), source }),
        }
    }

    fn model(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    /// Extra attempts after a failed request; each one is logged.
    pub retries: u32,
    pub max_tokens: u32,
    pub concurrency: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: String::new(),
            token: None,
            model: "default".into(),
            timeout_secs: 60,
            retries: 0,
            max_tokens: 512,
            concurrency: 4,
        }
    }
}

impl EndpointConfig {
    /// Fills URL, token and timeout from `LLM_ENDPOINT_URL`, `LLM_API_TOKEN`
    /// and `LLM_TIMEOUT_SECS` when set.
    pub fn with_env(mut self) -> Result<Self, LlmError> {
        if let Ok(url) = std::env::var("LLM_ENDPOINT_URL") {
            self.url = url;
        }
        if let Ok(token) = std::env::var("LLM_API_TOKEN") {
            self.token = Some(token);
        }
        if let Ok(t) = std::env::var("LLM_TIMEOUT_SECS") {
            self.timeout_secs =
                t.parse().map_err(|_| LlmError::Config(format!("LLM_TIMEOUT_SECS is not a number: {t:?}")))?;
        }
        Ok(self)
    }
}

/// OpenAI-style `/completions` endpoint over HTTP with a JSON body.
pub struct HttpEndpoint {
    cfg: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(cfg: EndpointConfig) -> Result<Self, LlmError> {
        if cfg.url.is_empty() {
            return Err(LlmError::Config("no endpoint URL (set LLM_ENDPOINT_URL)".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpEndpoint { cfg, agent })
    }

    fn attempt(&self, request_id: &str, body: &Value) -> Result<String, LlmError> {
        let endpoint = self.cfg.url.clone();
        let mut req = self.agent.post(&self.cfg.url).header("X-Request-Id", request_id);
        if let Some(token) = &self.cfg.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout { endpoint: endpoint.clone(), request_id: request_id.into() },
            other => LlmError::Transport {
                endpoint: endpoint.clone(),
                request_id: request_id.into(),
                message: other.to_string(),
            },
        };
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { endpoint, request_id: request_id.into(), status, body: text });
        }
        extract_completion(&text).ok_or_else(|| LlmError::BadResponse {
            endpoint,
            request_id: request_id.into(),
            message: format!("no completion text in {}", truncate(&text, 200)),
        })
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Completion text from the response shapes common servers return.
pub fn extract_completion(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let candidates = [
        v.pointer("/choices/0/text"),
        v.pointer("/choices/0/message/content"),
        v.pointer("/text"),
        v.pointer("/completion"),
        v.pointer("/generated_text"),
        v.pointer("/0/generated_text"),
    ];
    let found = candidates.into_iter().flatten().find_map(|c| c.as_str().map(String::from));
    found
}

impl CompletionBackend for HttpEndpoint {
    fn complete(&self, request: &PromptRequest, params: &GenParams) -> Result<String, LlmError> {
        params.validate()?;
        let key = request_key(&self.cfg.model, request, params);
        let mut body = serde_json::json!({
            "model": self.cfg.model,
            "prompt": request.prompt,
            "temperature": params.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        if let Some(p) = params.min_p {
            body["min_p"] = p.into();
        }
        if let Some(p) = params.top_p {
            body["top_p"] = p.into();
        }
        let mut attempt = 0;
        loop {
            let request_id = format!("{}-{attempt}", &key[..12]);
            match self.attempt(&request_id, &body) {
                Ok(text) => return Ok(text),
                Err(e) if attempt < self.cfg.retries => {
                    log::warn!("{e}; retrying ({}/{})", attempt + 1, self.cfg.retries);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn model(&self) -> &str {
        &self.cfg.model
    }
}

/// Runs `f` over `items` on at most `workers` threads; results keep input
/// order.
fn bounded_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("unpoisoned") = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("unpoisoned").expect("every slot filled")).collect()
}

/// Prompts for every sample and parses each answer.
pub fn run_dataset(
    backend: &dyn CompletionBackend,
    params: &GenParams,
    dataset: &Corpus,
    concurrency: usize,
) -> Result<Vec<ParsedLlmOutput>, LlmError> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(LlmError::EmptyDataset);
    }
    bounded_map(&dataset.samples, concurrency, |s| {
        let req = build_prompt(&s.words);
        backend.complete(&req, params).map(|raw| parse_output(&raw, &s.words))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    MinP(f64),
    TopP(f64),
}

impl Sampling {
    pub fn with_temperature(self, temperature: f64) -> GenParams {
        match self {
            Sampling::MinP(p) => GenParams { temperature, min_p: Some(p), top_p: None },
            Sampling::TopP(p) => GenParams { temperature, min_p: None, top_p: Some(p) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub temperatures: Vec<f64>,
    pub settings: Vec<Sampling>,
}

impl Default for SweepGrid {
    /// Temperatures 0.8/0.5/0.2 against min_p 0.1/0.3/0.5 and top_p 0.9/0.7/0.5.
    fn default() -> Self {
        SweepGrid {
            temperatures: vec![0.8, 0.5, 0.2],
            settings: vec![
                Sampling::MinP(0.1),
                Sampling::MinP(0.3),
                Sampling::MinP(0.5),
                Sampling::TopP(0.9),
                Sampling::TopP(0.7),
                Sampling::TopP(0.5),
            ],
        }
    }
}

impl SweepGrid {
    /// Cells row-major: one row per sampling setting.
    pub fn cells(&self) -> Vec<GenParams> {
        self.settings.iter().flat_map(|s| self.temperatures.iter().map(|t| s.with_temperature(*t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub params: GenParams,
    pub macro_f1: Option<f64>,
    pub unresolved: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub model: String,
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
}

/// Scores every grid cell over `dataset`. A cell whose requests fail is
/// marked with the first error; the others still complete.
pub fn sweep(
    backend: &dyn CompletionBackend,
    grid: &SweepGrid,
    dataset: &Corpus,
    concurrency: usize,
    opts: &ScoreOptions,
) -> Result<SweepTable, LlmError> {
    if dataset.is_empty() {
        return Err(LlmError::EmptyDataset);
    }
    let params = grid.cells();
    for p in &params {
        p.validate()?;
    }
    let failed: Vec<AtomicBool> = params.iter().map(|_| AtomicBool::new(false)).collect();
    let jobs: Vec<(usize, usize)> =
        (0..params.len()).flat_map(|c| (0..dataset.len()).map(move |s| (c, s))).collect();
    let results = bounded_map(&jobs, concurrency, |&(c, s)| {
        if failed[c].load(Ordering::Relaxed) {
            return None;
        }
        let sample = &dataset.samples[s];
        let out = backend.complete(&build_prompt(&sample.words), &params[c]).map(|raw| parse_output(&raw, &sample.words));
        if out.is_err() {
            failed[c].store(true, Ordering::Relaxed);
        }
        Some(out)
    });

    let mut cells = Vec::with_capacity(params.len());
    for (c, p) in params.iter().enumerate() {
        let outs = &results[c * dataset.len()..(c + 1) * dataset.len()];
        let error = outs.iter().flatten().find_map(|r| r.as_ref().err()).map(ToString::to_string);
        if let Some(error) = error {
            cells.push(SweepCell { params: *p, macro_f1: None, unresolved: 0, error: Some(error) });
            continue;
        }
        let parsed: Vec<&ParsedLlmOutput> = outs.iter().map(|r| r.as_ref().expect("ran").as_ref().expect("ok")).collect();
        let triples: Vec<_> = dataset
            .samples
            .iter()
            .zip(&parsed)
            .map(|(s, o)| (s.id.as_str(), s.labels.as_slice(), o.labels.as_slice()))
            .collect();
        match eval::score(triples, opts) {
            Ok(r) => cells.push(SweepCell { params: *p, macro_f1: Some(r.macro_f1), unresolved: r.unresolved, error: None }),
            Err(e) => cells.push(SweepCell { params: *p, macro_f1: None, unresolved: 0, error: Some(e.to_string()) }),
        }
    }
    Ok(SweepTable { model: backend.model().to_string(), grid: grid.clone(), cells })
}

impl SweepTable {
    /// Text table: one row per sampling setting, one column per temperature.
    pub fn render(&self) -> String {
        let mut out = format!("{:<24} {:>6} {:>6}", "model", "min_p", "top_p");
        for t in &self.grid.temperatures {
            out += &format!(" {:>8}", format!("T={t}"));
        }
        out.push('\n');
        let width = self.grid.temperatures.len();
        for (row, setting) in self.grid.settings.iter().enumerate() {
            let (min_p, top_p) = match setting {
                Sampling::MinP(p) => (p.to_string(), "-".to_string()),
                Sampling::TopP(p) => ("-".to_string(), p.to_string()),
            };
            out += &format!("{:<24} {min_p:>6} {top_p:>6}", self.model);
            for cell in &self.cells[row * width..(row + 1) * width] {
                let v = cell.macro_f1.map_or("failed".to_string(), |f| format!("{f:.3}"));
                out += &format!(" {v:>8}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_template_override(path: &Path) -> Result<String, LlmError> {
    let text = fs::read_to_string(path).map_err(|source| LlmError::Io { path: path.display().to_string(), source })?;
    if !text.contains("{address}") {
        return Err(LlmError::Config(format!("{}: template has no {{address}} placeholder", path.display())));
    }
    Ok(text)
}
