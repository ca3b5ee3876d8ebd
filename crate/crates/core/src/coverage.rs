//! Bidirectional entity matching, coverage scores and correction suggestions.
//!
//! Dates, identifiers and numerics match symbolically (shared canonical form
//! or variant). Phrases and statements match by graded similarity: scored
//! pairs at or above the minimum grade are assigned greedily by descending
//! combined score. Everything left over is missing (input side),
//! hallucinated (output side) or unverified when its scoring failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, EmbeddingCache, EmbeddingProvider};
use crate::extract::{Entity, EntityKind, EntitySet, Extractor, Span};
use crate::simmetrics::{classify, score_pair, Grade, GradeRuleset, MatchGrade, SimilarityVector};
use crate::text::CorpusStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Symbolic,
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Matched,
    Missing,
    Hallucinated,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub kind: EntityKind,
    pub method: MatchMethod,
    pub verdict: Verdict,
    /// Position of the entity within its kind group of the input set.
    pub input_index: Option<usize>,
    pub output_index: Option<usize>,
    pub input_entity: Option<Entity>,
    pub output_entity: Option<Entity>,
    /// Graded only: grade of the assigned pair, or of the best candidate
    /// for unpaired entities.
    pub grade: Option<MatchGrade>,
    pub similarity: Option<SimilarityVector>,
}

impl MatchRecord {
    fn sort_key(&self) -> (EntityKind, usize, usize) {
        (
            self.kind,
            self.input_index.unwrap_or(usize::MAX),
            self.output_index.unwrap_or(usize::MAX),
        )
    }
}

/// Orders records canonically so merged results never depend on completion order.
pub fn sort_records(records: &mut [MatchRecord]) {
    records.sort_by_key(MatchRecord::sort_key);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub min_grade: Grade,
    pub phrase_min_grade: Grade,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            min_grade: Grade::Moderate,
            phrase_min_grade: Grade::Moderate,
        }
    }
}

impl MatchOptions {
    pub fn min_for(&self, kind: EntityKind) -> Grade {
        if kind == EntityKind::Phrase {
            self.phrase_min_grade
        } else {
            self.min_grade
        }
    }
}

fn record(kind: EntityKind, method: MatchMethod, verdict: Verdict) -> MatchRecord {
    MatchRecord {
        kind,
        method,
        verdict,
        input_index: None,
        output_index: None,
        input_entity: None,
        output_entity: None,
        grade: None,
        similarity: None,
    }
}

/// Symbolic matching for every structured kind.
pub fn match_structured(inputs: &EntitySet, outputs: &EntitySet) -> Vec<MatchRecord> {
    let mut out = Vec::new();
    for kind in EntityKind::ALL.into_iter().filter(|k| k.is_structured()) {
        let ins = inputs.of_kind(kind);
        let outs = outputs.of_kind(kind);
        let mut used = vec![false; ins.len()];
        for (j, o) in outs.iter().enumerate() {
            let hit = (0..ins.len()).find(|&i| !used[i] && ins[i].equivalent(o));
            let mut r = match hit {
                Some(i) => {
                    used[i] = true;
                    let mut r = record(kind, MatchMethod::Symbolic, Verdict::Matched);
                    r.input_index = Some(i);
                    r.input_entity = Some(ins[i].clone());
                    r
                }
                None => record(kind, MatchMethod::Symbolic, Verdict::Hallucinated),
            };
            r.output_index = Some(j);
            r.output_entity = Some(o.clone());
            out.push(r);
        }
        for (i, e) in ins.iter().enumerate().filter(|(i, _)| !used[*i]) {
            let mut r = record(kind, MatchMethod::Symbolic, Verdict::Missing);
            r.input_index = Some(i);
            r.input_entity = Some(e.clone());
            out.push(r);
        }
    }
    sort_records(&mut out);
    out
}

/// One graded comparison: `(kind, input index, output index)`.
pub type PairKey = (EntityKind, usize, usize);

/// Similarity per graded pair; `Err` holds the reason scoring failed.
pub type PairScores = BTreeMap<PairKey, Result<SimilarityVector, String>>;

/// Every graded pair that needs a score.
pub fn graded_pairs(inputs: &EntitySet, outputs: &EntitySet) -> Vec<PairKey> {
    let mut keys = Vec::new();
    for kind in EntityKind::ALL.into_iter().filter(|k| !k.is_structured()) {
        for i in 0..inputs.count(kind) {
            for j in 0..outputs.count(kind) {
                keys.push((kind, i, j));
            }
        }
    }
    keys
}

/// Assigns graded matches from precomputed scores.
pub fn match_graded(
    inputs: &EntitySet,
    outputs: &EntitySet,
    scores: &PairScores,
    gr: &GradeRuleset,
    opts: &MatchOptions,
) -> Vec<MatchRecord> {
    let mut out = Vec::new();
    for kind in EntityKind::ALL.into_iter().filter(|k| !k.is_structured()) {
        let ins = inputs.of_kind(kind);
        let outs = outputs.of_kind(kind);
        let min = opts.min_for(kind);

        let mut graded: Vec<(usize, usize, SimilarityVector, MatchGrade)> = Vec::new();
        let mut in_failed = vec![false; ins.len()];
        let mut out_failed = vec![false; outs.len()];
        for i in 0..ins.len() {
            for j in 0..outs.len() {
                match scores.get(&(kind, i, j)) {
                    Some(Ok(v)) => graded.push((i, j, *v, classify(v, gr))),
                    Some(Err(_)) | None => {
                        in_failed[i] = true;
                        out_failed[j] = true;
                    }
                }
            }
        }
        graded.sort_by(|a, b| {
            b.2.combined
                .total_cmp(&a.2.combined)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut in_pair: Vec<Option<usize>> = vec![None; ins.len()];
        let mut out_pair: Vec<Option<usize>> = vec![None; outs.len()];
        // Best candidate per entity, kept for unpaired records.
        let mut in_best: Vec<Option<usize>> = vec![None; ins.len()];
        let mut out_best: Vec<Option<usize>> = vec![None; outs.len()];
        for (idx, (i, j, _, g)) in graded.iter().enumerate() {
            in_best[*i].get_or_insert(idx);
            out_best[*j].get_or_insert(idx);
            if g.grade >= min && in_pair[*i].is_none() && out_pair[*j].is_none() {
                in_pair[*i] = Some(idx);
                out_pair[*j] = Some(idx);
            }
        }

        for (idx, (i, j, v, g)) in graded.iter().enumerate() {
            if in_pair[*i] == Some(idx) {
                let mut r = record(kind, MatchMethod::Graded, Verdict::Matched);
                r.input_index = Some(*i);
                r.output_index = Some(*j);
                r.input_entity = Some(ins[*i].clone());
                r.output_entity = Some(outs[*j].clone());
                r.grade = Some(g.clone());
                r.similarity = Some(*v);
                out.push(r);
            }
        }
        for i in (0..ins.len()).filter(|&i| in_pair[i].is_none()) {
            let verdict = if in_failed[i] { Verdict::Unverified } else { Verdict::Missing };
            let mut r = record(kind, MatchMethod::Graded, verdict);
            r.input_index = Some(i);
            r.input_entity = Some(ins[i].clone());
            if let Some(b) = in_best[i] {
                r.grade = Some(graded[b].3.clone());
                r.similarity = Some(graded[b].2);
            }
            out.push(r);
        }
        for j in (0..outs.len()).filter(|&j| out_pair[j].is_none()) {
            let verdict = if out_failed[j] { Verdict::Unverified } else { Verdict::Hallucinated };
            let mut r = record(kind, MatchMethod::Graded, verdict);
            r.output_index = Some(j);
            r.output_entity = Some(outs[j].clone());
            if let Some(b) = out_best[j] {
                r.grade = Some(graded[b].3.clone());
                r.similarity = Some(graded[b].2);
            }
            out.push(r);
        }
    }
    sort_records(&mut out);
    out
}

/// Shared state for scoring graded pairs.
#[derive(Debug, Clone)]
pub struct ScoringContext {
    pub stats: CorpusStats,
    pub extractor: Extractor,
    pub grades: GradeRuleset,
}

impl ScoringContext {
    /// TF-IDF statistics over the input text, the output text and any
    /// reference documents.
    pub fn new(input: &str, output: &str, reference: &[String], extractor: Extractor, grades: GradeRuleset) -> Self {
        let mut stats = CorpusStats::from_documents(&[input, output]);
        for doc in reference {
            stats.add_document(doc);
        }
        ScoringContext {
            stats,
            extractor,
            grades,
        }
    }

    pub fn score(&self, a: &str, b: &str, ea: &[f32], eb: &[f32]) -> SimilarityVector {
        score_pair(a, b, ea, eb, &self.stats, &self.extractor, &self.grades.metric_weights)
    }
}

/// Sequential matching with `p` (the pipeline runs the same steps on a
/// worker pool). A provider failure leaves the affected records unverified.
pub fn match_entities(
    inputs: &EntitySet,
    outputs: &EntitySet,
    ctx: &ScoringContext,
    p: &dyn EmbeddingProvider,
    opts: &MatchOptions,
) -> Vec<MatchRecord> {
    let cache = EmbeddingCache::new();
    let mut scores = PairScores::new();
    for key in graded_pairs(inputs, outputs) {
        let (kind, i, j) = key;
        let a = &inputs.of_kind(kind)[i].canonical;
        let b = &outputs.of_kind(kind)[j].canonical;
        let scored: Result<SimilarityVector, EmbedError> = cache
            .get_or_embed(p, &[a, b])
            .map(|v| ctx.score(a, b, &v[0], &v[1]));
        scores.insert(key, scored.map_err(|e| e.to_string()));
    }
    let mut records = match_structured(inputs, outputs);
    records.extend(match_graded(inputs, outputs, &scores, &ctx.grades, opts));
    sort_records(&mut records);
    records
}

/// Per-kind weights of the weighted content score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoverageWeights(pub BTreeMap<EntityKind, f64>);

impl Default for CoverageWeights {
    fn default() -> Self {
        CoverageWeights(BTreeMap::from([
            (EntityKind::Date, 0.5),
            (EntityKind::Identifier, 0.5),
            (EntityKind::Numeric, 0.4),
            (EntityKind::Phrase, 0.2),
            (EntityKind::Statement, 0.2),
        ]))
    }
}

impl CoverageWeights {
    /// Reads a JSON map `kind -> weight`; kinds not listed keep their default.
    pub fn parse(json: &str) -> Result<Self, String> {
        let given: BTreeMap<EntityKind, f64> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        if let Some((k, w)) = given.iter().find(|(_, w)| **w < 0.0 || !w.is_finite()) {
            return Err(format!("weight for `{k}` must be a nonnegative number, got {w}"));
        }
        let mut w = CoverageWeights::default();
        w.0.extend(given);
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn get(&self, kind: EntityKind) -> f64 {
        self.0.get(&kind).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCount {
    /// c_t: matched records.
    pub verified: usize,
    /// n_t: all records of the kind.
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionAction {
    Replace,
    Insert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub kind: EntityKind,
    pub action: SuggestionAction,
    /// Output span to replace; absent for insertions.
    pub span: Option<Span>,
    pub original: Option<String>,
    pub replacement: String,
    /// Edit distance between canonical forms (replacements only).
    pub distance: Option<usize>,
    pub input_index: usize,
    pub output_index: Option<usize>,
    pub reason: String,
}

impl Suggestion {
    /// Structured replacement one edit away from its source value.
    pub fn is_safe(&self) -> bool {
        self.action == SuggestionAction::Replace && self.kind.is_structured() && self.distance == Some(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub input_coverage: f64,
    pub output_coverage: f64,
    /// S_w in `[0, 1]`.
    pub weighted_score: f64,
    pub counts: BTreeMap<EntityKind, KindCount>,
    pub flags: Vec<MatchRecord>,
    pub suggestions: Vec<Suggestion>,
}

/// Per-kind counts over records: a matched pair is one verified unit.
pub fn kind_counts(records: &[MatchRecord]) -> BTreeMap<EntityKind, KindCount> {
    let mut counts: BTreeMap<EntityKind, KindCount> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.kind).or_default();
        c.total += 1;
        if r.verdict == Verdict::Matched {
            c.verified += 1;
        }
    }
    counts
}

/// `S_w = Σ w_t·c_t / Σ w_t·n_t`, 1 when the denominator is 0.
pub fn weighted_score(counts: &BTreeMap<EntityKind, KindCount>, weights: &CoverageWeights) -> f64 {
    let num: f64 = counts.iter().map(|(k, c)| weights.get(*k) * c.verified as f64).sum();
    let den: f64 = counts.iter().map(|(k, c)| weights.get(*k) * c.total as f64).sum();
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

pub fn coverage_scores(records: &[MatchRecord], inputs: &EntitySet, weights: &CoverageWeights) -> CoverageReport {
    let pct = |hit: usize, total: usize| if total == 0 { 100.0 } else { hit as f64 / total as f64 * 100.0 };
    let matched = records.iter().filter(|r| r.verdict == Verdict::Matched).count();
    let in_total = records.iter().filter(|r| r.input_entity.is_some()).count();
    let out_total = records.iter().filter(|r| r.output_entity.is_some()).count();
    let counts = kind_counts(records);
    CoverageReport {
        input_coverage: pct(matched, in_total),
        output_coverage: pct(matched, out_total),
        weighted_score: weighted_score(&counts, weights),
        counts,
        flags: records.iter().filter(|r| r.verdict != Verdict::Matched).cloned().collect(),
        suggestions: suggest_corrections(records, inputs),
    }
}

/// Replacement suggestions for near-miss hallucinated structured values
/// (edit distance ≤ 2 on canonical forms) and insertion prompts for missing
/// entities not already covered by a replacement.
pub fn suggest_corrections(records: &[MatchRecord], inputs: &EntitySet) -> Vec<Suggestion> {
    const RADIUS: usize = 2;
    let missing: BTreeSet<(EntityKind, usize)> = records
        .iter()
        .filter(|r| r.verdict == Verdict::Missing)
        .filter_map(|r| r.input_index.map(|i| (r.kind, i)))
        .collect();
    let mut covered: BTreeSet<(EntityKind, usize)> = BTreeSet::new();
    let mut out = Vec::new();

    for r in records.iter().filter(|r| r.verdict == Verdict::Hallucinated && r.kind.is_structured()) {
        let Some(o) = &r.output_entity else { continue };
        let best = inputs
            .of_kind(r.kind)
            .iter()
            .enumerate()
            .map(|(i, e)| (strsim::levenshtein(&e.canonical, &o.canonical), !missing.contains(&(r.kind, i)), i, e))
            .filter(|(d, ..)| *d <= RADIUS)
            .min_by_key(|(d, taken, i, _)| (*d, *taken, *i));
        let Some((distance, _, i, e)) = best else { continue };
        // The variant spelled most like the output keeps its formatting.
        let replacement = e
            .variants
            .iter()
            .min_by_key(|v| (strsim::levenshtein(v, &o.surface), (*v).clone()))
            .cloned()
            .unwrap_or_else(|| e.surface.clone());
        covered.insert((r.kind, i));
        out.push(Suggestion {
            kind: r.kind,
            action: SuggestionAction::Replace,
            span: Some(o.span),
            original: Some(o.surface.clone()),
            replacement,
            distance: Some(distance),
            input_index: i,
            output_index: r.output_index,
            reason: format!("near-miss {} (edit distance {distance})", r.kind),
        });
    }
    for r in records.iter().filter(|r| r.verdict == Verdict::Missing) {
        let (Some(i), Some(e)) = (r.input_index, &r.input_entity) else { continue };
        if covered.contains(&(r.kind, i)) {
            continue;
        }
        out.push(Suggestion {
            kind: r.kind,
            action: SuggestionAction::Insert,
            span: None,
            original: None,
            replacement: e.surface.clone(),
            distance: None,
            input_index: i,
            output_index: None,
            reason: format!("{} from the input is missing", r.kind),
        });
    }
    out
}
