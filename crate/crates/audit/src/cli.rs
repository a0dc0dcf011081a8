//! The `stereo-audit` command line.
//!
//! Exit codes: 0 on success (any verdict), 1 when the pipeline fails, 2 on
//! configuration or usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use stereo_core::domain::SocialDimension;
use stereo_core::evaluation::{
    aggregate_annotations, classifier_accuracy, compare, intent_accuracy, label_map, signature_labels, Annotation,
    EvalError, TaskOutcome,
};
use stereo_core::golden::{golden_intents, BENCHMARK_IMAGES_PER_PROMPT, BENCHMARK_MODELS, TEMPLATES};
use stereo_core::planner::{run_trajectory, PlannerConfig, StereotypeReport};
use stereo_core::store::{synthesize, InstructionStore, StoreManifest};
use stereo_core::synth::{signed_test_set, NoisyClassifier};
use stereo_core::tools::{AuditToolbox, ExtractionOptions};

use crate::annotations::{load_annotations, write_annotations};
use crate::backends::Backends;
use crate::config::{resolve, BackendKind, ConfigError, FileConfig, Overrides, RunConfig};
use crate::corpus::{ingest, ingest_bytes, AdapterSet, Corpus, CorpusRecord, CorpusSpec};
use crate::extract::{extract_pairs, ExtractOptions};
use crate::manifest::{file_digest, Manifest};
use crate::persist::{fixture_store, load_store, save_store, store_to_string};
use crate::pool::bounded_map;

#[derive(Debug, Parser)]
#[command(name = "stereo-audit", version, about = "Audit text-to-image models for social stereotypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long, env = "STEREO_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Backend for every role. Giving both values is an error.
    #[arg(long, value_enum, env = "STEREO_BACKEND", action = ArgAction::Append, global = true)]
    pub backend: Vec<BackendKind>,
    /// Instruction store (JSONL). The bundled fixture is used when absent.
    #[arg(long, env = "STEREO_STORE", global = true)]
    pub store: Option<PathBuf>,
    /// Images per prompt.
    #[arg(long, env = "STEREO_N", global = true)]
    pub n: Option<usize>,
    #[arg(long, env = "STEREO_SEED", global = true)]
    pub seed: Option<u64>,
    /// threshold:<t> or binomial:<alpha>.
    #[arg(long, env = "STEREO_RULE", global = true)]
    pub rule: Option<String>,
    /// Output directory.
    #[arg(long, env = "STEREO_OUT", global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "STEREO_CONCURRENCY", global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, env = "STEREO_CHAT_URL", global = true)]
    pub chat_url: Option<String>,
    #[arg(long, env = "STEREO_GENERATE_URL", global = true)]
    pub generate_url: Option<String>,
    #[arg(long, env = "STEREO_CLASSIFY_URL", global = true)]
    pub classify_url: Option<String>,
    /// Bearer token for live backends.
    #[arg(long, env = "STEREO_TOKEN", hide_env_values = true, global = true)]
    pub token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one detection task.
    Detect {
        #[arg(long)]
        query: Option<String>,
        /// Replay the config and query recorded in a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Extract instruction pairs from toxicity corpora into a store.
    BuildDataset {
        /// corpus=path, e.g. sbic=data/sbic.csv. Repeatable.
        #[arg(long = "corpus")]
        corpora: Vec<CorpusSpec>,
        /// Column maps; the bundled ones are used when absent.
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Add the bundled sample file of every corpus.
        #[arg(long)]
        samples: bool,
        #[arg(long, default_value_t = 0.1)]
        max_failure_fraction: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Print the dimension split of a store.
    Stats {
        /// Synthesize a store from a TOML count manifest instead.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a stratified sample for annotation.
    Sample {
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the detection benchmark over every query template.
    Benchmark {
        /// Comma-separated model ids; all benchmark models when absent.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare benchmark reports with human annotations.
    Evaluate {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Intent-extraction accuracy on the golden query set.
    Intents {
        #[command(flatten)]
        common: Common,
    },
    /// Per-subgroup accuracy of two simulated classifiers.
    Classifiers {
        #[arg(long, default_value_t = 0.75)]
        accuracy_a: f64,
        #[arg(long, default_value_t = 0.80)]
        accuracy_b: f64,
        #[arg(long, default_value_t = 1000)]
        per_subgroup: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("config error: {m}"),
                CliError::Failure(m) => eprintln!("error: {m}"),
            }
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Detect { query, manifest, common } => cmd_detect(query, manifest, &common),
        Command::BuildDataset {
            corpora,
            adapters,
            samples,
            max_failure_fraction,
            common,
        } => cmd_build_dataset(&corpora, adapters.as_deref(), samples, max_failure_fraction, &common),
        Command::Stats { counts, common } => cmd_stats(counts.as_deref(), &common),
        Command::Sample { fraction, common } => cmd_sample(fraction, &common),
        Command::Benchmark { models, common } => cmd_benchmark(&models, &common),
        Command::Evaluate {
            reports,
            annotations,
            common,
        } => cmd_evaluate(&reports, &annotations, &common),
        Command::Intents { common } => cmd_intents(&common),
        Command::Classifiers {
            accuracy_a,
            accuracy_b,
            per_subgroup,
            common,
        } => cmd_classifiers(accuracy_a, accuracy_b, per_subgroup, &common),
    }
}

fn file_config(common: &Common) -> CliResult<FileConfig> {
    Ok(match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    })
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        backend: common.backend.clone(),
        store: common.store.clone(),
        n: common.n,
        seed: common.seed,
        rule: common.rule.clone(),
        out: common.out.clone(),
        concurrency: common.concurrency,
        chat_url: common.chat_url.clone(),
        generate_url: common.generate_url.clone(),
        classify_url: common.classify_url.clone(),
        token: common.token.clone(),
    }
}

pub fn run_config(common: &Common) -> CliResult<RunConfig> {
    Ok(resolve(file_config(common)?, overrides(common))?)
}

/// The configured store. A path that does not exist yields an empty store
/// so that commands needing pairs fail with a clear `EmptyStore`.
pub fn open_store(config: &RunConfig) -> CliResult<InstructionStore> {
    match &config.store {
        None => Ok(fixture_store()),
        Some(path) if !path.exists() => {
            log::warn!("store {} does not exist; starting empty", path.display());
            Ok(InstructionStore::new())
        }
        Some(path) => load_store(path).map_err(fail),
    }
}

fn create_out(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))
}

fn write_out(dir: &Path, name: &str, contents: &str, manifest: &mut Manifest) -> CliResult {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn finish(dir: &Path, mut manifest: Manifest) -> CliResult {
    manifest.outputs.push("manifest.json".to_string());
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn planner_config(config: &RunConfig) -> PlannerConfig {
    PlannerConfig {
        max_steps: config.max_steps,
        rule: config.rule,
        ..PlannerConfig::default()
    }
}

fn toolbox<'a>(backends: &'a Backends, store: &'a InstructionStore, config: &RunConfig) -> AuditToolbox<'a> {
    let mut toolbox = AuditToolbox::new(
        backends.chat.as_ref(),
        backends.images.as_ref(),
        backends.classifier.as_ref(),
        store,
    );
    toolbox.n_images = config.n;
    toolbox.seed = config.seed;
    toolbox
}

fn store_input(manifest: Manifest, config: &RunConfig) -> Manifest {
    match &config.store {
        Some(path) => match file_digest(path) {
            Ok(d) => manifest.input("store_sha256", d),
            Err(_) => manifest.input("store_sha256", "missing"),
        },
        None => manifest.input("store", "bundled fixture"),
    }
}

pub fn report_json(report: &StereotypeReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn cmd_detect(query: Option<String>, replay: Option<PathBuf>, common: &Common) -> CliResult {
    let (config, query) = match replay {
        Some(path) => {
            let recorded = Manifest::load(&path).map_err(CliError::Config)?;
            let query = query
                .or_else(|| recorded.inputs.get("query").cloned())
                .ok_or_else(|| CliError::Config("manifest records no query".into()))?;
            let mut config = recorded.config;
            if let Some(out) = &common.out {
                config.out = out.clone();
            }
            // Secrets are never recorded, so take the token from this run.
            config.token = common.token.clone();
            (config, query)
        }
        None => {
            let query = query.ok_or_else(|| CliError::Config("--query or --manifest is required".into()))?;
            (run_config(common)?, query)
        }
    };
    let store = open_store(&config)?;
    let out = config.out.clone();
    create_out(&out)?;
    let backends = Backends::from_config(&config, &out.join("images"));
    let toolbox = toolbox(&backends, &store, &config);
    let report = run_trajectory(&query, &planner_config(&config), backends.chat.as_ref(), &toolbox).map_err(fail)?;

    let mut manifest = store_input(Manifest::new("detect", &config).input("query", query.clone()), &config);
    write_out(&out, "report.json", &report_json(&report), &mut manifest)?;
    write_out(&out, "trajectory.log", &report.trajectory.render_log(), &mut manifest)?;
    finish(&out, manifest)?;
    println!(
        "{}: {:?} (score {:.3}, majority {}, {} images)",
        report.model,
        report.verdict,
        report.score.value,
        report.score.majority.display_name(),
        report.score.n_total
    );
    Ok(())
}

fn bundled_sample(corpus: Corpus) -> &'static str {
    match corpus {
        Corpus::Sbic => include_str!("../fixtures/corpora/sbic.csv"),
        Corpus::HateExplain => include_str!("../fixtures/corpora/hateexplain.jsonl"),
        Corpus::Dynahate => include_str!("../fixtures/corpora/dynahate.csv"),
        Corpus::Ihc => include_str!("../fixtures/corpora/ihc.tsv"),
        Corpus::Smtd => include_str!("../fixtures/corpora/smtd.csv"),
    }
}

fn cmd_build_dataset(
    corpora: &[CorpusSpec],
    adapters: Option<&Path>,
    samples: bool,
    max_failure_fraction: f64,
    common: &Common,
) -> CliResult {
    let config = run_config(common)?;
    if corpora.is_empty() && !samples {
        return Err(CliError::Config("give --corpus name=path or --samples".into()));
    }
    if !(0.0..=1.0).contains(&max_failure_fraction) {
        return Err(CliError::Config("--max-failure-fraction must lie in [0, 1]".into()));
    }
    let adapter_set = match adapters {
        Some(path) => AdapterSet::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => AdapterSet::builtin(),
    };
    let mut manifest = Manifest::new("build-dataset", &config);
    let mut records: Vec<CorpusRecord> = Vec::new();
    if samples {
        for corpus in Corpus::ALL {
            let adapter = adapter_set.get(corpus).map_err(|e| CliError::Config(e.to_string()))?;
            let got = ingest_bytes(corpus, bundled_sample(corpus).as_bytes(), adapter).map_err(fail)?;
            report_diagnostics(corpus, &got.diagnostics);
            records.extend(got.records);
        }
        manifest = manifest.input("samples", "bundled");
    }
    for spec in corpora {
        let adapter = adapter_set.get(spec.corpus).map_err(|e| CliError::Config(e.to_string()))?;
        let got = ingest(spec.corpus, &spec.path, adapter).map_err(fail)?;
        report_diagnostics(spec.corpus, &got.diagnostics);
        let digest = file_digest(&spec.path).map_err(fail)?;
        manifest = manifest.input(&format!("corpus:{}", spec.corpus), digest);
        records.extend(got.records);
    }
    let out = config.out.clone();
    create_out(&out)?;
    let backends = Backends::from_config(&config, &out.join("images"));
    let options = ExtractOptions {
        concurrency: config.concurrency,
        max_failure_fraction,
    };
    let extraction = extract_pairs(&records, &adapter_set, backends.chat.as_ref(), &options).map_err(fail)?;
    for f in &extraction.failures {
        eprintln!("warning: {}: {}", f.record, f.error);
    }
    let mut store = match &config.store {
        // Extend an existing store in place of starting fresh.
        Some(path) if path.exists() => load_store(path).map_err(fail)?,
        _ => InstructionStore::new(),
    };
    for entry in extraction.store.entries() {
        store.insert_entry(entry.clone());
    }
    let target = out.join("store.jsonl");
    save_store(&store, &target).map_err(fail)?;
    manifest.outputs.push("store.jsonl".to_string());
    finish(&out, manifest)?;
    println!(
        "{} records, {} benign, {} without stereotype, {} failed; store has {} pairs",
        records.len(),
        extraction.benign,
        extraction.no_stereotype,
        extraction.failures.len(),
        store.len()
    );
    Ok(())
}

fn report_diagnostics(corpus: Corpus, diagnostics: &[crate::corpus::Diagnostic]) {
    if !diagnostics.is_empty() {
        eprintln!("{corpus}: skipped {} malformed row(s)", diagnostics.len());
        for d in diagnostics {
            eprintln!("  row {}: {}", d.row, d.reason);
        }
    }
}

pub fn load_count_manifest(path: &Path) -> CliResult<StoreManifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_stats(counts: Option<&Path>, common: &Common) -> CliResult {
    let config = run_config(common)?;
    let store = match counts {
        Some(path) => synthesize(&load_count_manifest(path)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => open_store(&config)?,
    };
    let stats = store.stats().map_err(fail)?;
    print!("{}", stats.render());
    Ok(())
}

fn cmd_sample(fraction: f64, common: &Common) -> CliResult {
    let config = run_config(common)?;
    let store = open_store(&config)?;
    let sample = store.stratified_sample(fraction, config.seed).map_err(fail)?;
    let out = config.out.clone();
    create_out(&out)?;
    let mut manifest = store_input(Manifest::new("sample", &config).input("fraction", fraction.to_string()), &config);
    let picked = InstructionStore::from_pairs(sample.iter().cloned());
    write_out(&out, "sample.jsonl", &store_to_string(&picked), &mut manifest)?;
    finish(&out, manifest)?;
    println!("sampled {} of {} pairs", sample.len(), store.len());
    Ok(())
}

/// Queries of every template for each model.
pub fn benchmark_queries_for(models: &[String]) -> Vec<String> {
    models
        .iter()
        .flat_map(|m| TEMPLATES.iter().map(move |t| t.render(m)))
        .collect()
}

fn cmd_benchmark(models: &[String], common: &Common) -> CliResult {
    let mut file = file_config(common)?;
    if file.n.is_none() {
        file.n = Some(BENCHMARK_IMAGES_PER_PROMPT);
    }
    let config = resolve(file, overrides(common))?;
    let models: Vec<String> = if models.is_empty() {
        BENCHMARK_MODELS.iter().map(|m| m.to_string()).collect()
    } else {
        models.to_vec()
    };
    let queries = benchmark_queries_for(&models);
    let store = open_store(&config)?;
    let out = config.out.clone();
    create_out(&out)?;
    let backends = Backends::from_config(&config, &out.join("images"));
    let toolbox = toolbox(&backends, &store, &config);
    let planner = planner_config(&config);
    let outcomes: Vec<TaskOutcome> = bounded_map(&queries, config.concurrency, |q| {
        TaskOutcome::from_result(q, run_trajectory(q, &planner, backends.chat.as_ref(), &toolbox))
    });

    let mut manifest = store_input(Manifest::new("benchmark", &config).input("models", models.join(",")), &config);
    let reports: Vec<StereotypeReport> = outcomes.iter().filter_map(|o| o.report.clone()).collect();
    let lines: String = reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
        .collect();
    write_out(&out, "reports.jsonl", &lines, &mut manifest)?;
    let failures: Vec<&TaskOutcome> = outcomes.iter().filter(|o| o.error.is_some()).collect();
    if !failures.is_empty() {
        let text = serde_json::to_string_pretty(&failures).expect("outcomes serialize") + "\n";
        write_out(&out, "failures.json", &text, &mut manifest)?;
    }
    // Simulated images carry their true subgroup; export it as a reference
    // annotation file.
    let truth = signature_labels(&reports);
    let signed = reports.iter().all(|r| r.images.iter().all(|i| i.signature.is_some()));
    if signed && !reports.is_empty() {
        let rows: Vec<Annotation> = truth
            .iter()
            .map(|(image, label)| Annotation {
                image_ref: image.clone(),
                annotator_id: "signature".to_string(),
                label: *label,
            })
            .collect();
        let mut buf = Vec::new();
        write_annotations(&rows, &mut buf).map_err(fail)?;
        write_out(&out, "annotations.csv", &String::from_utf8(buf).expect("csv is UTF-8"), &mut manifest)?;
    }
    write_out(&out, "summary.txt", &benchmark_summary(&reports, failures.len()), &mut manifest)?;
    finish(&out, manifest)?;
    print!("{}", benchmark_summary(&reports, failures.len()));
    if reports.is_empty() {
        return Err(fail("every benchmark query failed"));
    }
    Ok(())
}

fn benchmark_summary(reports: &[StereotypeReport], failed: usize) -> String {
    let mut per_model: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    for r in reports {
        *per_model
            .entry(&r.model)
            .or_default()
            .entry(format!("{:?}", r.verdict))
            .or_default() += 1;
    }
    let mut out = String::new();
    for (model, verdicts) in per_model {
        let parts: Vec<String> = verdicts.iter().map(|(v, c)| format!("{v} {c}")).collect();
        out.push_str(&format!("{model}: {}\n", parts.join(", ")));
    }
    out.push_str(&format!("{} reports, {failed} failed\n", reports.len()));
    out
}

pub fn read_reports(path: &Path) -> CliResult<Vec<StereotypeReport>> {
    let text = fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| fail(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn cmd_evaluate(reports_path: &Path, annotations: &Path, common: &Common) -> CliResult {
    let config = run_config(common)?;
    let reports = read_reports(reports_path)?;
    let entries = load_annotations(annotations).map_err(fail)?;
    let human = label_map(&aggregate_annotations(&entries).map_err(fail)?);
    let agreement = match compare(&reports, &human, &config.rule) {
        Ok(a) => a,
        Err(EvalError::CoverageGap(missing)) => {
            let shown: Vec<&str> = missing.iter().take(5).map(String::as_str).collect();
            return Err(fail(format!(
                "CoverageGap: {} image(s) lack annotations, e.g. {}",
                missing.len(),
                shown.join(", ")
            )));
        }
        Err(e) => return Err(fail(e)),
    };
    let out = config.out.clone();
    create_out(&out)?;
    let mut manifest = Manifest::new("evaluate", &config)
        .input("reports_sha256", file_digest(reports_path).map_err(fail)?)
        .input("annotations_sha256", file_digest(annotations).map_err(fail)?);
    let text = agreement.render();
    write_out(&out, "agreement.json", &(serde_json::to_string_pretty(&agreement).expect("serializes") + "\n"), &mut manifest)?;
    write_out(&out, "agreement.txt", &text, &mut manifest)?;
    finish(&out, manifest)?;
    print!("{text}");
    Ok(())
}

fn cmd_intents(common: &Common) -> CliResult {
    let config = run_config(common)?;
    let out = config.out.clone();
    let backends = Backends::from_config(&config, &out.join("images"));
    let acc = intent_accuracy(&golden_intents(), backends.chat.as_ref(), &ExtractionOptions::default());
    println!("intent accuracy: {}/{} = {:.4}", acc.correct, acc.total, acc.fraction);
    for f in &acc.failures {
        match &f.got {
            Ok(got) => println!("  {:?}: expected {:?}, got {:?}", f.query, f.expected, got),
            Err(e) => println!("  {:?}: {e}", f.query),
        }
    }
    Ok(())
}

fn cmd_classifiers(a: f64, b: f64, per_subgroup: usize, common: &Common) -> CliResult {
    let config = run_config(common)?;
    for acc in [a, b] {
        if !(acc > 0.0 && acc <= 1.0) {
            return Err(CliError::Config(format!("classifier accuracy {acc} must lie in (0, 1]")));
        }
    }
    if per_subgroup == 0 {
        return Err(CliError::Config("--per-subgroup must be positive".into()));
    }
    let first = NoisyClassifier::uniform(a, config.seed);
    let second = NoisyClassifier::uniform(b, config.seed);
    let (name_a, name_b) = (format!("A({a})"), format!("B({b})"));
    for d in SocialDimension::ALL {
        let images = signed_test_set(d, per_subgroup);
        let table = classifier_accuracy(&first, &second, &images, d).map_err(fail)?;
        println!("{}", d.name());
        println!("{}", table.render(&name_a, &name_b).trim_end());
    }
    Ok(())
}
