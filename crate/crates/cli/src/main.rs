mod manifest;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use noisy_address::align::{self, HyperDefaults, SubwordSplitter, WordPieceSplitter};
use noisy_address::augment::{
    self, Ablation, DataVersion, Lexicon, MaskSynthConfig, NameCorpora, CountryTable, NoiseConfig,
};
use noisy_address::eval::{self, Average, EvalReport, ReportFormat, ReportRow, ScoreOptions};
use noisy_address::ingest::{self, Format, LoadOptions, SplitSpec};
use noisy_address::interop::{self, TagVersion};
use noisy_address::llm::{self, CompletionBackend, EndpointConfig, FixtureStore, GenParams, HttpEndpoint, PromptRequest, SweepGrid};
use noisy_address::schema::BaseTag;
use noisy_address::tagger::{self, TrainConfig};
use noisy_address::{desk, Corpus};

use manifest::{manifest_path_for, ManifestBuilder};

#[derive(Parser)]
#[command(name = "noisy-address", version, about = "Build, train and score noisy address parsers")]
struct Cli {
    /// TOML file with optional [noise], [split], [train], [mask_synth],
    /// [endpoint], [export] and [eval] tables. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Latin filter, zero-shot split, per-country cap and train/test split.
    Ingest(IngestArgs),
    /// Generate a synthetic clean corpus for demos and tests.
    Desk(DeskArgs),
    /// Build a V0, V1 or V2 dataset from a clean corpus.
    Augment(AugmentArgs),
    /// Generate stand-in structure masks.
    SynthMasks(SynthMasksArgs),
    /// Train the sequence tagger with early stopping on a zero-shot set.
    Train(TrainArgs),
    /// Tag a corpus with a trained model.
    Predict(PredictArgs),
    /// Export subword-aligned training data plus a fine-tuning config.
    AlignExport(AlignExportArgs),
    /// Map external (LibPostal) predictions onto this tag set.
    ImportPreds(ImportPredsArgs),
    /// Prompt a completion model per sample and repair its output.
    LlmParse(LlmParseArgs),
    /// Score a completion model over a grid of sampling parameters.
    LlmSweep(LlmSweepArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Aggregate fold scores into a results table.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    default_country: Option<String>,
    #[arg(long, value_delimiter = ',')]
    zero_shot_countries: Option<Vec<String>>,
    /// Samples kept per country.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write k cross-validation folds of the training split.
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct DeskArgs {
    output: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = desk::TRAIN_COUNTRIES.map(String::from))]
    countries: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    per_country: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long = "version", value_name = "V0|V1|V2")]
    data_version: DataVersion,
    /// Mask file (JSON lines); the bundled sample masks when omitted.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one noise setting, e.g. `hardsep_fraction=0.5` or
    /// `ooa_kind_dist.postbox=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    no_prefix: bool,
    #[arg(long)]
    no_hardsep: bool,
    /// Directory with given_names.txt, surnames.txt, company_stems.txt and
    /// company_suffixes.txt.
    #[arg(long)]
    names_dir: Option<PathBuf>,
    /// Country translation table (TSV: iso, en, fr, de, it, native).
    #[arg(long)]
    countries: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct SynthMasksArgs {
    output: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Development set for early stopping.
    #[arg(long)]
    zero_shot: PathBuf,
    #[arg(long, default_value = "model.bin")]
    model: PathBuf,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training samples between development evaluations.
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Label stored in the model metadata, e.g. v2.
    #[arg(long)]
    data_version: Option<String>,
    #[arg(long)]
    no_prefix: bool,
    #[arg(long)]
    no_hardsep: bool,
}

#[derive(Args)]
struct PredictArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct AlignExportArgs {
    input: PathBuf,
    output: PathBuf,
    /// WordPiece vocabulary (one piece per line); the bundled demo
    /// vocabulary when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct ImportPredsArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_name = "v0v1|v2")]
    tag_version: TagVersion,
    /// Gold corpus; checks ids and word counts when given.
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Args)]
struct LlmSource {
    /// Offline mode: read recorded completions from this directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Call the live endpoint and store every completion under --fixtures.
    #[arg(long, requires = "fixtures")]
    record: bool,
    /// Opaque model label, part of the fixture key.
    #[arg(long)]
    model_label: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct LlmParseArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_name = "temperature=T,min_p=P")]
    params: GenParams,
    #[command(flatten)]
    source: LlmSource,
}

#[derive(Args)]
struct LlmSweepArgs {
    input: PathBuf,
    /// JSON result table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: LlmSource,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args)]
struct ScoringArgs {
    #[arg(long)]
    average: Option<Average>,
    /// Compare tags without B-/I- prefixes.
    #[arg(long)]
    strip: bool,
    #[arg(long, value_delimiter = ',')]
    exclude_tags: Option<Vec<BaseTag>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Write the full report as JSON (input for `report`).
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    model_name: String,
    #[arg(long, default_value = "-")]
    data_version: String,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Eval JSON files; files sharing model, data version and split are
    /// folds of one row.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    noise: Option<NoiseConfig>,
    split: Option<SplitSpec>,
    train: Option<TrainConfig>,
    mask_synth: Option<MaskSynthConfig>,
    endpoint: Option<EndpointConfig>,
    export: Option<HyperDefaults>,
    eval: Option<ScoreOptions>,
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

type Res<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Res {
    let cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg),
        Command::Desk(a) => cmd_desk(a),
        Command::Augment(a) => cmd_augment(a, &cfg),
        Command::SynthMasks(a) => cmd_synth_masks(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Predict(a) => cmd_predict(a),
        Command::AlignExport(a) => cmd_align_export(a, &cfg),
        Command::ImportPreds(a) => cmd_import_preds(a),
        Command::LlmParse(a) => cmd_llm_parse(a, &cfg),
        Command::LlmSweep(a) => cmd_llm_sweep(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Report(a) => cmd_report(a),
    }
}

fn load(path: &Path, format: Option<Format>, default_country: Option<String>) -> Res<Corpus> {
    let format = format.unwrap_or_else(|| Format::from_path(path));
    ingest::load_corpus(path, format, &LoadOptions { default_country }).map_err(data)
}

fn save(corpus: &Corpus, path: &Path) -> Res {
    ingest::save_corpus(corpus, path).map_err(data)
}

fn write_manifest(m: &ManifestBuilder, artifacts: &[&Path], at: &Path) -> Res {
    m.write(artifacts, at).map_err(|e| data(format!("{}: {e}", at.display())))
}

fn create(path: &Path) -> Res<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Res {
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}").map_err(|e| data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| data(format!("{}: {e}", path.display())))
}

fn cmd_ingest(a: IngestArgs, cfg: &FileConfig) -> Res {
    let mut spec = cfg.split.clone().unwrap_or_default();
    if let Some(z) = a.zero_shot_countries {
        spec.zero_shot_countries = z.into_iter().map(|c| c.to_ascii_lowercase()).collect();
    }
    if let Some(c) = a.cap {
        spec.per_country_cap = c;
    }
    if let Some(t) = a.test_size {
        spec.test_size = t;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if a.folds.is_some_and(|k| k < 2) {
        return Err(Failure::Usage("--folds needs at least 2".into()));
    }
    let corpus = load(&a.input, a.format, a.default_country)?;
    let splits = ingest::prepare_splits(&corpus, &spec).map_err(data)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| data(format!("{}: {e}", a.out_dir.display())))?;
    let mut written = Vec::new();
    for (name, c) in [("train", &splits.train), ("test", &splits.test), ("zero_shot", &splits.zero_shot)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        save(c, &path)?;
        written.push(path);
    }
    if let Some(k) = a.folds {
        for (i, fold) in ingest::kfold(&splits.train, k, spec.seed).map_err(data)?.iter().enumerate() {
            for (part, c) in [("train", &fold.train), ("validation", &fold.validation)] {
                let path = a.out_dir.join(format!("fold{i}_{part}.jsonl"));
                save(c, &path)?;
                written.push(path);
            }
        }
    }
    let details = serde_json::json!({
        "input_samples": corpus.len(),
        "non_latin_removed": splits.non_latin_removed,
        "train": splits.train.len(),
        "test": splits.test.len(),
        "zero_shot": splits.zero_shot.len(),
        "folds": a.folds,
    });
    println!("{}", serde_json::to_string_pretty(&details).expect("json"));
    let mut m = ManifestBuilder::start();
    m.config(&spec).seed("split", spec.seed).input(&a.input).details(&details);
    let refs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    write_manifest(&m, &refs, &a.out_dir.join("manifest.json"))
}

fn cmd_desk(a: DeskArgs) -> Res {
    let supported: Vec<&str> = desk::supported_countries().collect();
    let countries: Vec<&str> = a.countries.iter().map(String::as_str).collect();
    if let Some(bad) = countries.iter().find(|c| !supported.contains(c)) {
        return Err(Failure::Usage(format!("no desk format for country {bad:?} (have {})", supported.join(","))));
    }
    let corpus = desk::generate(&countries, a.per_country, a.seed);
    save(&corpus, &a.output)?;
    let mut m = ManifestBuilder::start();
    m.seed("desk", a.seed).details(&serde_json::json!({ "countries": countries, "per_country": a.per_country }));
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

fn noise_config(cfg: &FileConfig, sets: &[String], seed: Option<u64>) -> Res<NoiseConfig> {
    let mut noise = cfg.noise.clone().unwrap_or_default();
    for kv in sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        noise.set(k.trim(), v.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(s) = seed {
        noise.seed = s;
    }
    noise.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(noise)
}

fn cmd_augment(a: AugmentArgs, cfg: &FileConfig) -> Res {
    let noise = noise_config(cfg, &a.set, a.seed)?;
    let mut lexicon = Lexicon::bundled();
    if let Some(dir) = &a.names_dir {
        lexicon.names = NameCorpora::from_dir(dir).map_err(data)?;
    }
    if let Some(path) = &a.countries {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        lexicon.countries = CountryTable::from_tsv(&text).map_err(data)?;
    }
    let masks = match &a.masks {
        Some(p) => augment::load_masks(p).map_err(data)?,
        None => augment::bundled_masks(),
    };
    let corpus = load(&a.input, a.format, None)?;
    let (built, report) = augment::build_version(&corpus, a.data_version, &masks, &noise, &lexicon).map_err(data)?;
    let ablation = Ablation { no_prefix: a.no_prefix, no_hardsep: a.no_hardsep };
    let built = augment::ablate_corpus(&built, ablation);
    save(&built, &a.output)?;
    info!("{} samples, {} skipped, {} separators added", report.total, report.skipped.len(), report.hardsep_added);
    let mut m = ManifestBuilder::start();
    m.config(&serde_json::json!({ "version": a.data_version, "noise": noise, "ablation": ablation, "masks": masks.len() }))
        .seed("noise", noise.seed)
        .input(&a.input)
        .details(&report);
    if let Some(p) = &a.masks {
        m.input(p);
    }
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

fn cmd_synth_masks(a: SynthMasksArgs, cfg: &FileConfig) -> Res {
    let noise = cfg.noise.clone().unwrap_or_default();
    let mut synth = cfg.mask_synth.clone().unwrap_or_default();
    if let Some(c) = a.count {
        synth.count = c;
    }
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    let masks = augment::synthesize_masks(&synth, &noise).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut w = create(&a.output)?;
    augment::write_masks(&masks, &mut w).and_then(|_| w.flush()).map_err(|e| data(format!("{}: {e}", a.output.display())))?;
    let mut m = ManifestBuilder::start();
    m.config(&synth).seed("mask_synth", synth.seed);
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig) -> Res {
    let mut tc = cfg.train.clone().unwrap_or_default();
    if let Some(p) = a.patience {
        tc.patience = p;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(e) = a.eval_every {
        tc.eval_every_updates = e;
    }
    if let Some(e) = a.epochs {
        tc.max_epochs = e;
    }
    if a.max_steps.is_some() {
        tc.max_steps = a.max_steps;
    }
    if let Some(v) = a.data_version {
        tc.train_version = v;
    }
    tc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ablation = Ablation { no_prefix: a.no_prefix, no_hardsep: a.no_hardsep };
    let train = augment::ablate_corpus(&load(&a.train, None, None)?, ablation);
    let dev = augment::ablate_corpus(&load(&a.zero_shot, None, None)?, ablation);
    let model = tagger::train(&train, &dev, &tc).map_err(data)?;
    tagger::save_model(&model, &a.model).map_err(data)?;
    let meta = &model.meta;
    println!(
        "trained on {} samples: {} steps, best step {} (dev loss {:.4}){}",
        train.len(),
        meta.steps_run,
        meta.best_step,
        meta.best_dev_loss,
        if meta.early_stopped { ", stopped early" } else { "" }
    );
    let mut m = ManifestBuilder::start();
    m.config(&serde_json::json!({ "train": tc, "ablation": ablation }))
        .seed("train", tc.seed)
        .input(&a.train)
        .input(&a.zero_shot)
        .details(meta);
    write_manifest(&m, &[&a.model], &manifest_path_for(&a.model))
}

fn cmd_predict(a: PredictArgs) -> Res {
    let model = tagger::load_model(&a.model).map_err(data)?;
    let corpus = load(&a.input, None, None)?;
    let preds = model.predict_corpus(&corpus);
    write_lines(
        &a.output,
        corpus.samples.iter().zip(&preds).map(|(s, p)| {
            let labels: Vec<_> = p.iter().copied().map(Some).collect();
            eval::prediction_to_json(&s.id, Some(&s.words), &labels)
        }),
    )?;
    let mut m = ManifestBuilder::start();
    m.input(&a.model).input(&a.input).details(&serde_json::json!({ "samples": corpus.len() }));
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

fn cmd_align_export(a: AlignExportArgs, cfg: &FileConfig) -> Res {
    let hyper = cfg.export.clone().unwrap_or_default();
    let splitter = match &a.vocab {
        Some(p) => WordPieceSplitter::from_vocab_file(p).map_err(data)?,
        None => WordPieceSplitter::bundled(),
    };
    let corpus = load(&a.input, None, None)?;
    align::export_training_file(&corpus, &splitter as &dyn SubwordSplitter, &a.output, &hyper).map_err(data)?;
    let sidecar = align::sidecar_path(&a.output);
    let mut m = ManifestBuilder::start();
    m.config(&hyper).seed("export", hyper.seed).input(&a.input);
    if let Some(v) = &a.vocab {
        m.input(v);
    }
    write_manifest(&m, &[&a.output, &sidecar], &manifest_path_for(&a.output))
}

fn cmd_import_preds(a: ImportPredsArgs) -> Res {
    let gold = a.gold.as_deref().map(|g| load(g, None, None)).transpose()?;
    let preds = interop::load_predictions(&a.input, a.tag_version, gold.as_ref()).map_err(data)?;
    let words: BTreeMap<&str, &[String]> =
        gold.iter().flat_map(|g| g.samples.iter().map(|s| (s.id.as_str(), s.words.as_slice()))).collect();
    write_lines(
        &a.output,
        preds.iter().map(|(id, labels)| {
            let labels: Vec<_> = labels.iter().copied().map(Some).collect();
            eval::prediction_to_json(id, words.get(id.as_str()).copied(), &labels)
        }),
    )?;
    let mut m = ManifestBuilder::start();
    m.config(&serde_json::json!({ "tag_version": a.tag_version.to_string() })).input(&a.input);
    if let Some(g) = &a.gold {
        m.input(g);
    }
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

struct Recording {
    live: HttpEndpoint,
    store: FixtureStore,
}

impl CompletionBackend for Recording {
    fn complete(&self, request: &PromptRequest, params: &GenParams) -> Result<String, noisy_address::error::LlmError> {
        let raw = self.live.complete(request, params)?;
        self.store.record(request, params, &raw)?;
        Ok(raw)
    }

    fn model(&self) -> &str {
        self.live.model()
    }
}

fn backend(src: &LlmSource, cfg: &FileConfig) -> Res<(Box<dyn CompletionBackend>, EndpointConfig)> {
    let mut ep = cfg.endpoint.clone().unwrap_or_default();
    if let Some(label) = &src.model_label {
        ep.model = label.clone();
    }
    if let Some(c) = src.concurrency {
        ep.concurrency = c;
    }
    if ep.concurrency == 0 {
        return Err(Failure::Usage("concurrency must be at least 1".into()));
    }
    match (&src.fixtures, src.record) {
        (Some(dir), false) => Ok((Box::new(FixtureStore::new(dir, ep.model.clone())), ep)),
        (dir, record) => {
            let ep = ep.with_env().map_err(|e| Failure::Usage(e.to_string()))?;
            let live = HttpEndpoint::new(ep.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
            match (dir, record) {
                (Some(dir), true) => Ok((Box::new(Recording { live, store: FixtureStore::new(dir, ep.model.clone()) }), ep)),
                _ => Ok((Box::new(live), ep)),
            }
        }
    }
}

fn llm_dataset(path: &Path, src: &LlmSource) -> Res<Corpus> {
    let corpus = load(path, None, None)?;
    Ok(match src.sample_size {
        Some(n) => ingest::sample_n(&corpus, n, src.seed),
        None => corpus,
    })
}

fn score_options(cfg: &FileConfig, a: &ScoringArgs) -> ScoreOptions {
    let mut opts = cfg.eval.clone().unwrap_or_default();
    if let Some(avg) = a.average {
        opts.average = avg;
    }
    if a.strip {
        opts.strip = true;
    }
    if let Some(ex) = &a.exclude_tags {
        opts.exclude = ex.iter().copied().collect();
    }
    opts
}

fn cmd_llm_parse(a: LlmParseArgs, cfg: &FileConfig) -> Res {
    let (backend, ep) = backend(&a.source, cfg)?;
    let dataset = llm_dataset(&a.input, &a.source)?;
    let parsed = llm::run_dataset(backend.as_ref(), &a.params, &dataset, ep.concurrency).map_err(data)?;
    write_lines(
        &a.output,
        dataset.samples.iter().zip(&parsed).map(|(s, p)| {
            let mut v: serde_json::Value =
                serde_json::from_str(&eval::prediction_to_json(&s.id, Some(&s.words), &p.labels)).expect("json");
            v["repairs"] = serde_json::to_value(&p.repair_log).expect("json");
            v.to_string()
        }),
    )?;
    let triples: Vec<_> =
        dataset.samples.iter().zip(&parsed).map(|(s, p)| (s.id.as_str(), s.labels.as_slice(), p.labels.as_slice())).collect();
    let report = eval::score(triples, &cfg.eval.clone().unwrap_or_default()).map_err(data)?;
    let mut repairs: BTreeMap<String, usize> = BTreeMap::new();
    for r in parsed.iter().flat_map(|p| &p.repair_log) {
        *repairs.entry(r.kind.to_string()).or_default() += 1;
    }
    print!("{}", eval::render_per_tag(&report));
    for (k, n) in &repairs {
        println!("repair {k}: {n}");
    }
    let mut m = ManifestBuilder::start();
    m.config(&serde_json::json!({ "params": a.params, "endpoint": ep, "template": llm::TEMPLATE_ID }))
        .seed("sample", a.source.seed)
        .input(&a.input)
        .details(&serde_json::json!({ "samples": dataset.len(), "macro_f1": report.macro_f1, "repairs": repairs }));
    write_manifest(&m, &[&a.output], &manifest_path_for(&a.output))
}

fn cmd_llm_sweep(a: LlmSweepArgs, cfg: &FileConfig) -> Res {
    let opts = score_options(cfg, &a.scoring);
    let (backend, ep) = backend(&a.source, cfg)?;
    let dataset = llm_dataset(&a.input, &a.source)?;
    let table = llm::sweep(backend.as_ref(), &SweepGrid::default(), &dataset, ep.concurrency, &opts).map_err(data)?;
    print!("{}", table.render());
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&table).expect("json") + "\n")
            .map_err(|e| data(format!("{}: {e}", out.display())))?;
        let mut m = ManifestBuilder::start();
        m.config(&serde_json::json!({ "endpoint": ep, "scoring": opts })).seed("sample", a.source.seed).input(&a.input);
        write_manifest(&m, &[out], &manifest_path_for(out))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalFile {
    model: String,
    data_version: String,
    split: String,
    report: EvalReport,
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Res {
    let opts = score_options(cfg, &a.scoring);
    let gold = load(&a.gold, None, None)?;
    let pred = eval::load_predictions(&a.pred).map_err(data)?;
    let report = eval::score_corpus(&gold, &pred, &opts).map_err(data)?;
    print!("{}", eval::render_per_tag(&report));
    if let Some(out) = &a.json_out {
        let file = EvalFile { model: a.model_name, data_version: a.data_version, split: a.split, report };
        fs::write(out, serde_json::to_string_pretty(&file).expect("json") + "\n")
            .map_err(|e| data(format!("{}: {e}", out.display())))?;
        let mut m = ManifestBuilder::start();
        m.config(&opts).input(&a.gold).input(&a.pred);
        write_manifest(&m, &[out], &manifest_path_for(out))?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Res {
    let mut groups: Vec<((String, String, String), Vec<EvalReport>)> = Vec::new();
    for path in &a.inputs {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let f: EvalFile = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let key = (f.model, f.data_version, f.split);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, reports)) => reports.push(f.report),
            None => groups.push((key, vec![f.report])),
        }
    }
    let rows = groups
        .into_iter()
        .map(|((model, data_version, split), reports)| {
            Ok(ReportRow { model, data_version, split, summary: eval::aggregate_folds(reports).map_err(data)? })
        })
        .collect::<Res<Vec<_>>>()?;
    let bytes = eval::render_report(&rows, a.format);
    match &a.out {
        Some(out) => {
            fs::write(out, &bytes).map_err(|e| data(format!("{}: {e}", out.display())))?;
            let mut m = ManifestBuilder::start();
            for p in &a.inputs {
                m.input(p);
            }
            write_manifest(&m, &[out], &manifest_path_for(out))
        }
        None => {
            std::io::stdout().write_all(&bytes).map_err(data)?;
            Ok(())
        }
    }
}
