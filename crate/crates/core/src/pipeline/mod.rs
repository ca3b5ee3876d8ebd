//! Verification jobs on a supervised worker pool.
//!
//! A job first runs input validation. A blocked input stops there. Otherwise
//! entities are extracted from both sides. Symbolic matching runs on its own
//! thread while graded pairs go through two pool stages: embedding of the
//! distinct texts, then pair scoring. Results are keyed by stable task ids
//! and merged in canonical order, so the report is the same for any pool
//! size or completion order.

pub mod audit;
pub mod pool;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{
    coverage_scores, graded_pairs, match_graded, match_structured, sort_records, CoverageReport, CoverageWeights,
    MatchOptions, MatchRecord, PairKey, PairScores, ScoringContext, Verdict,
};
use crate::embed::{EmbeddingProvider, ProviderInfo, Vector};
use crate::extract::{EntitySet, ExtractError, ExtractionConfig, Extractor, Source};
use crate::rulekit::Ruleset;
use crate::simmetrics::{GradeRuleset, SimilarityVector};
use crate::tableaux::{self, InputDocument, ValidationError, ValidationOutcome};

pub use audit::AuditLog;
pub use pool::{
    plan_pool, run_supervised, FaultInjector, FaultMode, NoHook, PoolPlan, Stage, SupervisorStats, TaskEnvelope,
    TaskFailure, TaskHook, TaskInfo, TaskResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOptions {
    pub matching: MatchOptions,
    pub max_retries: u32,
    pub pool: PoolPlan,
    /// Texts per embedding task (capped by the provider's batch limit).
    pub embed_batch: usize,
    /// Embed each distinct text once. Off only for equivalence checks.
    pub dedup: bool,
}

impl Default for JobOptions {
    fn default() -> Self {
        JobOptions {
            matching: MatchOptions::default(),
            max_retries: 1,
            pool: PoolPlan {
                worker_count: 4,
                per_worker_budget: 200,
                total_budget: 800,
            },
            embed_batch: 16,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerificationJob {
    pub job_id: String,
    pub input: InputDocument,
    pub output: String,
    pub ruleset: Ruleset,
    pub grades: GradeRuleset,
    pub weights: CoverageWeights,
    pub extraction: ExtractionConfig,
    /// Extra documents for TF-IDF statistics.
    pub reference: Vec<String>,
    pub options: JobOptions,
}

impl VerificationJob {
    /// A job with default grades, weights, extraction and options.
    pub fn new(input: InputDocument, output: impl Into<String>, ruleset: Ruleset) -> Self {
        let output = output.into();
        VerificationJob {
            job_id: job_id(&input, &output),
            input,
            output,
            ruleset,
            grades: GradeRuleset::default(),
            weights: CoverageWeights::default(),
            extraction: ExtractionConfig::default(),
            reference: Vec::new(),
            options: JobOptions::default(),
        }
    }
}

/// Content-derived id: first 16 hex digits of SHA-256 over input and output.
pub fn job_id(input: &InputDocument, output: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(input).unwrap_or_default());
    h.update([0u8]);
    h.update(output.as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
}

/// Distinct texts of a pair list plus, per pair, the positions of its two
/// texts in `unique`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dedup {
    pub unique: Vec<String>,
    pub expansion: Vec<(usize, usize)>,
}

pub fn dedup_statements<S: AsRef<str>>(pairs: &[(S, S)]) -> Dedup {
    let mut unique: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut slot = |t: &str, unique: &mut Vec<String>| {
        *index.entry(t.to_string()).or_insert_with(|| {
            unique.push(t.to_string());
            unique.len() - 1
        })
    };
    let expansion = pairs
        .iter()
        .map(|(a, b)| {
            let i = slot(a.as_ref(), &mut unique);
            let j = slot(b.as_ref(), &mut unique);
            (i, j)
        })
        .collect();
    Dedup { unique, expansion }
}

fn no_dedup<S: AsRef<str>>(pairs: &[(S, S)]) -> Dedup {
    let unique = pairs
        .iter()
        .flat_map(|(a, b)| [a.as_ref().to_string(), b.as_ref().to_string()])
        .collect();
    let expansion = (0..pairs.len()).map(|k| (2 * k, 2 * k + 1)).collect();
    Dedup { unique, expansion }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub graded_pairs: usize,
    pub unique_texts: usize,
    pub embed_tasks: usize,
    pub score_tasks: usize,
    pub retries: usize,
    pub failed_tasks: usize,
}

/// Deterministic job result (no timings).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub job_id: String,
    pub validation: ValidationOutcome,
    /// Absent when the input gate blocked the job.
    pub coverage: Option<CoverageReport>,
    pub records: Vec<MatchRecord>,
    pub stats: RunStats,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Observers for a run: fault/jitter hook and audit log.
pub struct RunContext<'a> {
    pub hook: &'a dyn TaskHook,
    pub audit: &'a AuditLog,
}

impl Default for RunContext<'_> {
    fn default() -> Self {
        static NO_HOOK: NoHook = NoHook;
        static NO_AUDIT: std::sync::OnceLock<AuditLog> = std::sync::OnceLock::new();
        RunContext {
            hook: &NO_HOOK,
            audit: NO_AUDIT.get_or_init(AuditLog::disabled),
        }
    }
}

struct ScorePayload {
    a: Arc<str>,
    b: Arc<str>,
    ea: Arc<Vector>,
    eb: Arc<Vector>,
}

fn embed_failure(e: crate::embed::EmbedError) -> TaskFailure {
    if e.is_transient() {
        TaskFailure::Transient(e.to_string())
    } else {
        TaskFailure::Fatal(e.to_string())
    }
}

/// Wall-clock durations, kept apart from the deterministic report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub validation_ms: f64,
    pub verification_ms: f64,
}

/// Runs validation and, unless blocked, the full output audit.
pub fn run_verification(
    job: &VerificationJob,
    provider: &dyn EmbeddingProvider,
    rc: &RunContext<'_>,
) -> Result<VerificationReport, PipelineError> {
    run_verification_timed(job, provider, rc).map(|(r, _)| r)
}

pub fn run_verification_timed(
    job: &VerificationJob,
    provider: &dyn EmbeddingProvider,
    rc: &RunContext<'_>,
) -> Result<(VerificationReport, Timing), PipelineError> {
    let started = Instant::now();
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1000.0;
    let audit = rc.audit;
    audit.event("job_started", json!({"provider": provider.info().model_id}));

    let validation = tableaux::run_validation(&job.ruleset, &job.input)?;
    let mut timing = Timing {
        validation_ms: ms(started.elapsed()),
        verification_ms: 0.0,
    };
    audit.event(
        "validation_finished",
        json!({"status": validation.status, "gate": validation.gate_result}),
    );
    if validation.blocked() {
        audit.event("job_finished", json!({"status": "blocked", "scored_pairs": 0}));
        let report = VerificationReport {
            job_id: job.job_id.clone(),
            validation,
            coverage: None,
            records: Vec::new(),
            stats: RunStats::default(),
            warnings: Vec::new(),
        };
        return Ok((report, timing));
    }

    let extractor = Extractor::new(job.extraction.clone())?;
    let input_text = tableaux::input_text(&job.input);
    let ctx = ScoringContext::new(&input_text, &job.output, &job.reference, extractor, job.grades.clone());
    let inputs = ctx.extractor.extract_with_stats(&input_text, Source::Input, &ctx.stats);
    let outputs = ctx.extractor.extract_with_stats(&job.output, Source::Output, &ctx.stats);

    let (structured, scores, stats) = thread::scope(|s| {
        let symbolic = s.spawn(|| match_structured(&inputs, &outputs));
        let (scores, stats) = score_graded(job, &ctx, &inputs, &outputs, provider, rc);
        (symbolic.join().expect("symbolic matching thread"), scores, stats)
    });

    let mut records = structured;
    records.extend(match_graded(&inputs, &outputs, &scores, &ctx.grades, &job.options.matching));
    sort_records(&mut records);
    let coverage = coverage_scores(&records, &inputs, &job.weights);

    let mut warnings = Vec::new();
    let unverified = records.iter().filter(|r| r.verdict == Verdict::Unverified).count();
    if unverified > 0 {
        warnings.push(format!(
            "{} comparison task(s) failed after retries; {unverified} record(s) are unverified",
            stats.failed_tasks
        ));
    }
    audit.event(
        "job_finished",
        json!({
            "status": "scored",
            "scored_pairs": stats.graded_pairs,
            "flags": coverage.flags.len(),
            "unverified": unverified,
        }),
    );
    timing.verification_ms = ms(started.elapsed()) - timing.validation_ms;
    let report = VerificationReport {
        job_id: job.job_id.clone(),
        validation,
        coverage: Some(coverage),
        records,
        stats,
        warnings,
    };
    Ok((report, timing))
}

fn score_graded(
    job: &VerificationJob,
    ctx: &ScoringContext,
    inputs: &EntitySet,
    outputs: &EntitySet,
    provider: &dyn EmbeddingProvider,
    rc: &RunContext<'_>,
) -> (PairScores, RunStats) {
    let opts = &job.options;
    let keys: Vec<PairKey> = graded_pairs(inputs, outputs);
    let texts: Vec<(&str, &str)> = keys
        .iter()
        .map(|(k, i, j)| (inputs.of_kind(*k)[*i].canonical.as_str(), outputs.of_kind(*k)[*j].canonical.as_str()))
        .collect();
    let dedup = if opts.dedup { dedup_statements(&texts) } else { no_dedup(&texts) };
    let workers = opts.pool.worker_count;

    // Stage 1: one embedding per distinct text.
    let batch = opts.embed_batch.clamp(1, provider.info().batch_limit.max(1));
    let embed_tasks: Vec<TaskEnvelope<Vec<String>, Vec<Vector>>> = dedup
        .unique
        .chunks(batch)
        .enumerate()
        .map(|(n, c)| TaskEnvelope::new(n as u64, None, c.to_vec()))
        .collect();
    let info: ProviderInfo = provider.info().clone();
    let (embed_done, embed_stats) = run_supervised(
        Stage::Embed,
        embed_tasks,
        workers,
        opts.max_retries,
        |texts: &Vec<String>| {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let v = provider.embed_batch(&refs).map_err(embed_failure)?;
            if v.len() != texts.len() || v.iter().any(|x| x.len() != info.dimension) {
                return Err(TaskFailure::Fatal("provider returned a malformed batch".into()));
            }
            Ok(v)
        },
        rc.hook,
        rc.audit,
    );
    let mut vectors: Vec<Option<Arc<Vector>>> = vec![None; dedup.unique.len()];
    let mut embed_errors: BTreeMap<usize, String> = BTreeMap::new();
    for t in embed_done {
        let base = t.task_id as usize * batch;
        match t.result {
            TaskResult::Done(vs) => {
                for (k, v) in vs.into_iter().enumerate() {
                    vectors[base + k] = Some(Arc::new(v));
                }
            }
            TaskResult::Failed(_) | TaskResult::Pending => {
                for k in 0..t.payload.len() {
                    embed_errors.insert(base + k, "embedding failed".to_string());
                }
            }
        }
    }

    // Stage 2: pure scoring of every pair whose embeddings exist.
    let unique: Vec<Arc<str>> = dedup.unique.iter().map(|s| Arc::from(s.as_str())).collect();
    let mut scores = PairScores::new();
    let mut score_tasks = Vec::new();
    for (n, (key, (a, b))) in keys.iter().zip(&dedup.expansion).enumerate() {
        match (&vectors[*a], &vectors[*b]) {
            (Some(ea), Some(eb)) => score_tasks.push(TaskEnvelope::new(
                n as u64,
                Some(key.0),
                ScorePayload {
                    a: Arc::clone(&unique[*a]),
                    b: Arc::clone(&unique[*b]),
                    ea: Arc::clone(ea),
                    eb: Arc::clone(eb),
                },
            )),
            _ => {
                let why = embed_errors.get(a).or_else(|| embed_errors.get(b)).cloned();
                scores.insert(*key, Err(why.unwrap_or_else(|| "embedding unavailable".into())));
            }
        }
    }
    let (score_done, score_stats) = run_supervised(
        Stage::Score,
        score_tasks,
        workers,
        opts.max_retries,
        |p: &ScorePayload| -> Result<SimilarityVector, TaskFailure> {
            if p.ea.len() != p.eb.len() || p.ea.is_empty() {
                return Err(TaskFailure::Fatal("malformed payload: embedding dimensions differ".into()));
            }
            Ok(ctx.score(&p.a, &p.b, &p.ea, &p.eb))
        },
        rc.hook,
        rc.audit,
    );
    for (id, r) in pool::collect_results(score_done) {
        scores.insert(keys[id as usize], r);
    }

    let stats = RunStats {
        graded_pairs: keys.len(),
        unique_texts: dedup.unique.len(),
        embed_tasks: embed_stats.tasks,
        score_tasks: score_stats.tasks,
        retries: embed_stats.retries + score_stats.retries,
        failed_tasks: embed_stats.failed + score_stats.failed,
    };
    (scores, stats)
}
