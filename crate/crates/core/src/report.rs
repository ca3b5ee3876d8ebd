//! Machine-readable report emitted by the command line.
//!
//! Flags and suggestions carry kinds, indices, grades and scores. Entity
//! text, spans and replacement values appear only when excerpts are
//! requested explicitly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageReport, KindCount, MatchMethod, MatchRecord, Suggestion, SuggestionAction, Verdict};
use crate::embed::{ProviderInfo, ProviderKind};
use crate::extract::{Entity, EntityKind, Span};
use crate::pipeline::{RunStats, Timing, VerificationReport};
use crate::simmetrics::{MatchGrade, SimilarityVector};
use crate::tableaux::{ValidationOutcome, ValidationStatus};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Clean,
    Warnings,
    Discrepancies,
    Blocked,
    Error,
}

impl ReportStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            ReportStatus::Clean => 0,
            ReportStatus::Error => 1,
            ReportStatus::Blocked => 2,
            ReportStatus::Discrepancies => 3,
            ReportStatus::Warnings => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSummary {
    pub kind: ProviderKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ProviderSummary {
    pub fn new(info: &ProviderInfo, warning: Option<String>) -> Self {
        ProviderSummary {
            kind: info.kind,
            model_id: info.model_id.clone(),
            warning,
        }
    }
}

/// Source excerpt of one entity; present only with excerpts enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub span: Span,
    pub text: String,
}

impl From<&Entity> for Excerpt {
    fn from(e: &Entity) -> Self {
        Excerpt {
            span: e.span,
            text: e.surface.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagView {
    pub kind: EntityKind,
    pub method: MatchMethod,
    pub verdict: Verdict,
    pub input_index: Option<usize>,
    pub output_index: Option<usize>,
    pub grade: Option<MatchGrade>,
    pub similarity: Option<SimilarityVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Excerpt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Excerpt>,
}

impl FlagView {
    fn new(r: &MatchRecord, excerpts: bool) -> Self {
        FlagView {
            kind: r.kind,
            method: r.method,
            verdict: r.verdict,
            input_index: r.input_index,
            output_index: r.output_index,
            grade: r.grade.clone(),
            similarity: r.similarity,
            input: r.input_entity.as_ref().filter(|_| excerpts).map(Excerpt::from),
            output: r.output_entity.as_ref().filter(|_| excerpts).map(Excerpt::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionView {
    pub kind: EntityKind,
    pub action: SuggestionAction,
    pub distance: Option<usize>,
    pub input_index: usize,
    pub output_index: Option<usize>,
    pub reason: String,
    /// Structured replacement at edit distance 1.
    pub safe: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
}

impl SuggestionView {
    fn new(s: &Suggestion, excerpts: bool) -> Self {
        SuggestionView {
            kind: s.kind,
            action: s.action,
            distance: s.distance,
            input_index: s.input_index,
            output_index: s.output_index,
            reason: s.reason.clone(),
            safe: s.is_safe(),
            span: s.span.filter(|_| excerpts),
            original: s.original.clone().filter(|_| excerpts),
            replacement: Some(s.replacement.clone()).filter(|_| excerpts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSection {
    pub input_coverage: f64,
    pub output_coverage: f64,
    pub weighted_score: f64,
    pub counts: BTreeMap<EntityKind, KindCount>,
    pub flags: Vec<FlagView>,
    pub suggestions: Vec<SuggestionView>,
    pub warnings: Vec<String>,
    pub stats: RunStats,
}

impl CoverageSection {
    fn new(c: &CoverageReport, warnings: &[String], stats: RunStats, excerpts: bool) -> Self {
        CoverageSection {
            input_coverage: c.input_coverage,
            output_coverage: c.output_coverage,
            weighted_score: c.weighted_score,
            counts: c.counts.clone(),
            flags: c.flags.iter().map(|r| FlagView::new(r, excerpts)).collect(),
            suggestions: c.suggestions.iter().map(|s| SuggestionView::new(s, excerpts)).collect(),
            warnings: warnings.to_vec(),
            stats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub job_id: String,
    /// Absent only when the run failed before validation finished.
    pub validation: Option<ValidationOutcome>,
    /// Absent for blocked inputs and validation-only runs.
    pub coverage: Option<CoverageSection>,
    pub timing: Timing,
    pub provider: Option<ProviderSummary>,
    pub status: ReportStatus,
}

impl ReportDocument {
    pub fn from_verification(
        r: &VerificationReport,
        timing: Timing,
        provider: ProviderSummary,
        excerpts: bool,
    ) -> Self {
        let coverage = r
            .coverage
            .as_ref()
            .map(|c| CoverageSection::new(c, &r.warnings, r.stats, excerpts));
        let mut doc = ReportDocument {
            schema_version: REPORT_SCHEMA_VERSION,
            job_id: r.job_id.clone(),
            validation: Some(r.validation.clone()),
            coverage,
            timing,
            provider: Some(provider),
            status: ReportStatus::Clean,
        };
        doc.status = doc.derive_status();
        doc
    }

    pub fn from_validation(job_id: String, v: ValidationOutcome, validation_ms: f64) -> Self {
        let mut doc = ReportDocument {
            schema_version: REPORT_SCHEMA_VERSION,
            job_id,
            validation: Some(v),
            coverage: None,
            timing: Timing {
                validation_ms,
                verification_ms: 0.0,
            },
            provider: None,
            status: ReportStatus::Clean,
        };
        doc.status = doc.derive_status();
        doc
    }

    /// Status as a function of contents: blocked, then discrepancies (any
    /// flag), then warnings (validation, coverage or provider), else clean.
    /// A missing validation outcome means the run failed.
    pub fn derive_status(&self) -> ReportStatus {
        let Some(v) = &self.validation else {
            return ReportStatus::Error;
        };
        if v.status == ValidationStatus::Blocked {
            return ReportStatus::Blocked;
        }
        if self.coverage.as_ref().is_some_and(|c| !c.flags.is_empty()) {
            return ReportStatus::Discrepancies;
        }
        let warned = v.status == ValidationStatus::PassWithWarnings
            || self.coverage.as_ref().is_some_and(|c| !c.warnings.is_empty())
            || self.provider.as_ref().is_some_and(|p| p.warning.is_some());
        if warned {
            ReportStatus::Warnings
        } else {
            ReportStatus::Clean
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The part of a report the review loop reads back.
#[derive(Debug, Clone, Deserialize)]
pub struct ReviewView {
    pub job_id: String,
    pub coverage: Option<CoverageSection>,
}
