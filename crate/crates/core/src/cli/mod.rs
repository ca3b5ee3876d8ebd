//! Command-line entry points.
//!
//! Exit codes: 0 clean or pass, 1 error, 2 blocked, 3 discrepancies,
//! 4 warnings only. Every path through [`run`] returns exactly one of them.

mod review;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::coverage::CoverageWeights;
use crate::embed::{configure_provider, ConfiguredProvider, ProviderSpec, ServiceOptions};
use crate::extract::{ExtractionConfig, Extractor};
use crate::pipeline::{self, plan_pool, AuditLog, JobOptions, NoHook, RunContext, VerificationJob};
use crate::report::{ProviderSummary, ReportDocument, ReportStatus};
use crate::retrieve::{self, CorpusIndex, QuerySchema, SourceDoc};
use crate::rulekit::Ruleset;
use crate::simmetrics::{Grade, GradeRuleset};
use crate::tableaux;

pub use review::{apply_decisions, Decision};

/// Overrides `--embedder` when set.
pub const EMBEDDER_ENV: &str = "VERITAB_EMBEDDER";

#[derive(Debug, Parser)]
#[command(name = "veritab", version, about = "Validate inputs and verify generated documents against them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the input gate of a ruleset over an input document.
    Validate(ValidateArgs),
    /// Validate the input, then audit a generated output against it.
    Verify(VerifyArgs),
    /// Walk through suggested corrections and write a corrected copy.
    Review(ReviewArgs),
    /// Chunk and embed a corpus directory.
    Index(IndexArgs),
    /// Answer a query from an index within a token budget.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    ruleset: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Refuse a ruleset written for another profile.
    #[arg(long)]
    profile: Option<String>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedderArgs {
    /// `fallback` or `service:URL`.
    #[arg(long, default_value = "fallback")]
    embedder: String,
    /// Use the fallback embedder when the service handshake fails.
    #[arg(long)]
    degrade_to_fallback: bool,
    #[arg(long, default_value_t = 30)]
    service_timeout_secs: u64,
}

impl EmbedderArgs {
    fn configure(&self) -> Result<ConfiguredProvider, String> {
        let raw = std::env::var(EMBEDDER_ENV).unwrap_or_else(|_| self.embedder.clone());
        let spec: ProviderSpec = raw.parse().map_err(|e| format!("{e}"))?;
        let opts = ServiceOptions {
            timeout: Duration::from_secs(self.service_timeout_secs),
            ..ServiceOptions::default()
        };
        configure_provider(&spec, opts, self.degrade_to_fallback).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    ruleset: PathBuf,
    /// Grade matrix; the bundled default when omitted.
    #[arg(long)]
    grades: Option<PathBuf>,
    /// Coverage weights per entity kind; bundled defaults when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Extraction configuration; built-in defaults when omitted.
    #[arg(long)]
    extraction: Option<PathBuf>,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// Lowest grade that counts a statement as matched.
    #[arg(long, default_value = "moderate")]
    min_grade: Grade,
    #[arg(long, default_value = "moderate")]
    phrase_min_grade: Grade,
    #[arg(long, default_value_t = 1)]
    max_retries: u32,
    #[arg(long, default_value_t = 800)]
    total_budget: u64,
    #[arg(long, default_value_t = 200)]
    per_worker_budget: u64,
    #[arg(long, default_value_t = 16)]
    max_workers: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Add entity text, spans and replacement values to the report.
    #[arg(long)]
    include_spans: bool,
    #[arg(long)]
    audit_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReviewArgs {
    /// Report written by `verify --include-spans`.
    #[arg(long)]
    report: PathBuf,
    /// The output document the report was made from. Never modified.
    #[arg(long)]
    output: PathBuf,
    /// Corrected copy; `<stem>.reviewed.<ext>` next to the output by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Apply structured distance-1 replacements without prompting.
    #[arg(long)]
    accept_all_safe: bool,
    #[arg(long)]
    audit_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// Directory of `.json` / `.jsonl` files of {report_id, section_type, text}.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
    #[arg(long, default_value_t = retrieve::DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    /// Token budget for the returned context.
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

/// Parses `args` (program name first) and runs one command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Review(a) => review::cmd_review(&a),
        Command::Index(a) => cmd_index(&a).map(|()| 0),
        Command::Retrieve(a) => cmd_retrieve(&a).map(|()| 0),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(json: &str, to: Option<&Path>) -> Result<(), String> {
    match to {
        Some(path) => fs::write(path, format!("{json}\n")).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{json}").map_err(|e| e.to_string())
        }
    }
}

fn load_ruleset(path: &Path, profile: Option<&str>) -> Result<Ruleset, String> {
    let rs = Ruleset::load(path).map_err(|e| e.to_string())?;
    match profile {
        Some(p) if p != rs.profile => Err(format!(
            "{}: ruleset profile `{}` does not match `{p}`",
            path.display(),
            rs.profile
        )),
        _ => Ok(rs),
    }
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32, String> {
    let rs = load_ruleset(&a.ruleset, a.profile.as_deref())?;
    let input = tableaux::load_input(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let started = Instant::now();
    let outcome = tableaux::run_validation(&rs, &input).map_err(|e| e.to_string())?;
    let ms = started.elapsed().as_secs_f64() * 1000.0;
    for f in &outcome.feedback {
        eprintln!("{:?} {}: {}", f.severity, f.condition, f.message);
    }
    let doc = ReportDocument::from_validation(pipeline::job_id(&input, ""), outcome, ms);
    emit(&doc.to_json_pretty(), a.report.as_deref())?;
    Ok(doc.status.exit_code())
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, String> {
    let rs = load_ruleset(&a.ruleset, None)?;
    let input = tableaux::load_input(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let output = read_text(&a.output)?;
    let mut job = VerificationJob::new(input, output, rs);
    if let Some(p) = &a.grades {
        job.grades = GradeRuleset::load(p).map_err(|e| e.to_string())?;
    }
    if let Some(p) = &a.weights {
        job.weights = CoverageWeights::load(p)?;
    }
    if let Some(p) = &a.extraction {
        job.extraction = ExtractionConfig::load(p).map_err(|e| e.to_string())?;
    }
    job.options = JobOptions {
        max_retries: a.max_retries,
        pool: plan_pool(a.total_budget, a.per_worker_budget, a.max_workers).map_err(|e| e.to_string())?,
        ..JobOptions::default()
    };
    job.options.matching.min_grade = a.min_grade;
    job.options.matching.phrase_min_grade = a.phrase_min_grade;

    let configured = a.embedder.configure()?;
    if let Some(w) = &configured.warning {
        eprintln!("warning: {w}");
    }
    let audit = match &a.audit_log {
        Some(p) => AuditLog::open(p, &job.job_id).map_err(|e| format!("{}: {e}", p.display()))?,
        None => AuditLog::disabled(),
    };
    let rc = RunContext {
        hook: &NoHook,
        audit: &audit,
    };
    let provider = configured.provider.as_ref();
    let (report, timing) = pipeline::run_verification_timed(&job, provider, &rc).map_err(|e| e.to_string())?;
    let summary = ProviderSummary::new(provider.info(), configured.warning.clone());
    let doc = ReportDocument::from_verification(&report, timing, summary, a.include_spans);
    audit.event("report_emitted", json!({"status": doc.status}));
    emit(&doc.to_json_pretty(), a.report.as_deref())?;
    if doc.status == ReportStatus::Discrepancies {
        if let Some(c) = &doc.coverage {
            eprintln!("{} discrepancies flagged", c.flags.len());
        }
    }
    Ok(doc.status.exit_code())
}

/// Reads every `.json` (object or array) and `.jsonl` file in `dir`, in
/// file-name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<SourceDoc>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("json" | "jsonl")))
        .collect();
    paths.sort();
    let mut docs = Vec::new();
    for path in paths {
        let text = read_text(&path)?;
        let bad = |e: serde_json::Error| format!("{}: {e}", path.display());
        if path.extension().is_some_and(|x| x == "jsonl") {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                docs.push(serde_json::from_str(line).map_err(bad)?);
            }
        } else {
            match serde_json::from_str::<serde_json::Value>(&text).map_err(bad)? {
                v @ serde_json::Value::Array(_) => docs.extend(serde_json::from_value::<Vec<SourceDoc>>(v).map_err(bad)?),
                v => docs.push(serde_json::from_value(v).map_err(bad)?),
            }
        }
    }
    Ok(docs)
}

fn cmd_index(a: &IndexArgs) -> Result<(), String> {
    let docs = load_corpus(&a.corpus)?;
    let configured = a.embedder.configure()?;
    if let Some(w) = &configured.warning {
        eprintln!("warning: {w}");
    }
    let idx = retrieve::index_corpus(&docs, configured.provider.as_ref(), a.max_tokens, &Extractor::default())
        .map_err(|e| e.to_string())?;
    idx.save(&a.out).map_err(|e| e.to_string())?;
    eprintln!("indexed {} documents into {} chunks", docs.len(), idx.len());
    Ok(())
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<(), String> {
    let idx = CorpusIndex::load(&a.index).map_err(|e| e.to_string())?;
    let schema = match &a.schema {
        Some(p) => QuerySchema::load(p).map_err(|e| e.to_string())?,
        None => QuerySchema::default(),
    };
    let configured = a.embedder.configure()?;
    let (query, context) = retrieve::retrieve(&idx, &a.query, &schema, configured.provider.as_ref(), a.budget)
        .map_err(|e| e.to_string())?;
    let out = json!({
        "query": query,
        "budget": a.budget,
        "context": context,
    });
    emit(&serde_json::to_string_pretty(&out).expect("json"), None)
}
