//! Five-metric statement similarity and graded classification.
//!
//! All scores are percentages in `[0, 100]`. The five metrics are TF-IDF
//! cosine, embedding cosine ("domain"), normalized Euclidean similarity,
//! token Jaccard overlap and keyword (stopword-free) Jaccard overlap.
//! `combined` is their weighted mean; `confidence` falls with their spread.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider};
use crate::extract::Extractor;
use crate::text::{self, CorpusStats};

/// Distance bound for unit vectors: `‖a − b‖₂ ≤ 2`.
pub const EUCLIDEAN_D_MAX: f64 = 2.0;
pub const MANHATTAN_D_MAX: f64 = 10.0;
/// Largest population standard deviation of values in `[0, 100]`.
pub const SIGMA_MAX: f64 = 50.0;

fn clamp_pct(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub tfidf: f64,
    pub domain: f64,
    pub euclidean: f64,
    pub token_overlap: f64,
    pub keyword_overlap: f64,
    pub combined: f64,
    pub confidence: f64,
}

impl SimilarityVector {
    /// Builds a vector from the five metric scores using `weights`.
    pub fn from_metrics(m: [f64; 5], weights: &MetricWeights) -> Self {
        let (combined, confidence) = combine(m, weights);
        SimilarityVector {
            tfidf: m[0],
            domain: m[1],
            euclidean: m[2],
            token_overlap: m[3],
            keyword_overlap: m[4],
            combined,
            confidence,
        }
    }

    pub fn metrics(&self) -> [f64; 5] {
        [self.tfidf, self.domain, self.euclidean, self.token_overlap, self.keyword_overlap]
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Tfidf => self.tfidf,
            Metric::Domain => self.domain,
            Metric::Euclidean => self.euclidean,
            Metric::TokenOverlap => self.token_overlap,
            Metric::KeywordOverlap => self.keyword_overlap,
            Metric::Combined => self.combined,
            Metric::Confidence => self.confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    pub tfidf: f64,
    pub domain: f64,
    pub euclidean: f64,
    pub token_overlap: f64,
    pub keyword_overlap: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights {
            tfidf: 0.2,
            domain: 0.2,
            euclidean: 0.2,
            token_overlap: 0.2,
            keyword_overlap: 0.2,
        }
    }
}

impl MetricWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.tfidf, self.domain, self.euclidean, self.token_overlap, self.keyword_overlap]
    }
}

/// Weighted mean and dispersion-based agreement of the five metrics.
///
/// `confidence = 100 · max(0, 1 − σ/50)` with σ the population standard
/// deviation (unweighted).
pub fn combine(m: [f64; 5], w: &MetricWeights) -> (f64, f64) {
    let w = w.as_array();
    let wsum: f64 = w.iter().sum();
    let combined = m.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() / wsum;
    let mean = m.iter().sum::<f64>() / 5.0;
    let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    let confidence = 100.0 * (1.0 - var.sqrt() / SIGMA_MAX).max(0.0);
    (clamp_pct(combined), clamp_pct(confidence))
}

/// Cosine of TF-IDF vectors × 100. Texts without tokens score 0.
pub fn tfidf_similarity(a: &str, b: &str, stats: &CorpusStats) -> f64 {
    let va = stats.tfidf_vector(a);
    let vb = stats.tfidf_vector(b);
    if va.is_empty() || vb.is_empty() {
        return 0.0;
    }
    if va == vb {
        return 100.0;
    }
    // Summing over the shared keys in key order keeps the result symmetric.
    let dot: f64 = va
        .iter()
        .filter_map(|(k, x)| vb.get(k).map(|y| x * y))
        .sum();
    let na = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    clamp_pct(dot / (na * nb) * 100.0)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn euclidean_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn manhattan_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs()).sum()
}

/// `(1 − min(d / 2, 1)) × 100`.
pub fn euclidean_similarity(d: f64) -> f64 {
    (1.0 - (d / EUCLIDEAN_D_MAX).min(1.0)) * 100.0
}

/// `(1 − min(d / 10, 1)) × 100`.
pub fn manhattan_similarity(d: f64) -> f64 {
    (1.0 - (d / MANHATTAN_D_MAX).min(1.0)) * 100.0
}

/// `(domain, euclidean)` for two embeddings. Negative cosines floor at 0.
pub fn vector_similarities(a: &[f32], b: &[f32]) -> (f64, f64) {
    if a == b {
        return (100.0, 100.0);
    }
    let domain = clamp_pct(cosine(a, b).max(0.0) * 100.0);
    let euclidean = clamp_pct(euclidean_similarity(euclidean_distance(a, b)));
    (domain, euclidean)
}

/// Embeds both texts with `p` and scores the pair.
pub fn embedding_similarities(a: &str, b: &str, p: &dyn EmbeddingProvider) -> Result<(f64, f64), EmbedError> {
    let v = p.embed_batch(&[a, b])?;
    Ok(vector_similarities(&v[0], &v[1]))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64 * 100.0
}

/// `(token_overlap, keyword_overlap)`: Jaccard over word sets, the second
/// with stopwords removed. Empty unions score 0.
pub fn overlap_scores(a: &str, b: &str, ex: &Extractor) -> (f64, f64) {
    let ta = text::token_set(a);
    let tb = text::token_set(b);
    let keywords = |s: &BTreeSet<String>| -> BTreeSet<String> {
        s.iter().filter(|t| !ex.is_stopword(t)).cloned().collect()
    };
    (jaccard(&ta, &tb), jaccard(&keywords(&ta), &keywords(&tb)))
}

/// Scores a text pair given precomputed embeddings.
pub fn score_pair(
    a: &str,
    b: &str,
    ea: &[f32],
    eb: &[f32],
    stats: &CorpusStats,
    ex: &Extractor,
    weights: &MetricWeights,
) -> SimilarityVector {
    let tfidf = tfidf_similarity(a, b, stats);
    let (domain, euclidean) = vector_similarities(ea, eb);
    let (token, keyword) = overlap_scores(a, b, ex);
    SimilarityVector::from_metrics([tfidf, domain, euclidean, token, keyword], weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    NoMatch,
    Weak,
    Moderate,
    Strong,
    Exact,
}

impl Grade {
    pub fn name(self) -> &'static str {
        match self {
            Grade::NoMatch => "no_match",
            Grade::Weak => "weak",
            Grade::Moderate => "moderate",
            Grade::Strong => "strong",
            Grade::Exact => "exact",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "exact" => Grade::Exact,
            "strong" => Grade::Strong,
            "moderate" => Grade::Moderate,
            "weak" => Grade::Weak,
            "no_match" => Grade::NoMatch,
            _ => return Err(format!("unknown grade `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tfidf,
    Domain,
    Euclidean,
    #[serde(alias = "overlap")]
    TokenOverlap,
    #[serde(alias = "keyword")]
    KeywordOverlap,
    Combined,
    Confidence,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Tfidf => "tfidf",
            Metric::Domain => "domain",
            Metric::Euclidean => "euclidean",
            Metric::TokenOverlap => "token_overlap",
            Metric::KeywordOverlap => "keyword_overlap",
            Metric::Combined => "combined",
            Metric::Confidence => "confidence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
        }
    }

    pub fn holds(self, x: f64, t: f64) -> bool {
        match self {
            CmpOp::Ge => x >= t,
            CmpOp::Gt => x > t,
            CmpOp::Le => x <= t,
            CmpOp::Lt => x < t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub metric: Metric,
    pub op: CmpOp,
    pub threshold: f64,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.metric.name(), self.op.symbol(), self.threshold)
    }
}

/// Conjunction of thresholds.
pub type Clause = Vec<Threshold>;

fn describe_clause(c: &Clause) -> String {
    c.iter().map(Threshold::to_string).collect::<Vec<_>>().join(" and ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeRule {
    pub grade: Grade,
    pub score_min: f64,
    pub conf_min: f64,
    /// Disjunction of clauses; empty means no extra condition.
    #[serde(default)]
    pub key_conditions: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeRuleset {
    #[serde(default)]
    pub metric_weights: MetricWeights,
    pub grades: Vec<GradeRule>,
}

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("grade ruleset: {0}")]
    Parse(String),
    #[error("grade ruleset: {0}")]
    Invalid(String),
}

const DEFAULT_GRADES: &str = include_str!("../data/grades.default.json");

impl Default for GradeRuleset {
    fn default() -> Self {
        GradeRuleset::parse(DEFAULT_GRADES).expect("bundled grade matrix")
    }
}

impl GradeRuleset {
    pub fn parse(json: &str) -> Result<Self, GradeError> {
        let gr: GradeRuleset = serde_json::from_str(json).map_err(|e| GradeError::Parse(e.to_string()))?;
        gr.validate()?;
        Ok(gr)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GradeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GradeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), GradeError> {
        let w = self.metric_weights.as_array();
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(GradeError::Invalid("metric weights must be nonnegative with a positive sum".into()));
        }
        for pair in self.grades.windows(2) {
            if pair[0].grade <= pair[1].grade {
                return Err(GradeError::Invalid(format!(
                    "grades must be listed from exact downwards; `{}` follows `{}`",
                    pair[1].grade, pair[0].grade
                )));
            }
            if pair[0].score_min < pair[1].score_min {
                return Err(GradeError::Invalid(format!(
                    "score_min of `{}` exceeds that of `{}`",
                    pair[1].grade, pair[0].grade
                )));
            }
        }
        if self.grades.iter().any(|g| g.grade == Grade::NoMatch) {
            return Err(GradeError::Invalid("`no_match` is the default and takes no row".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchGrade {
    pub grade: Grade,
    /// The key-condition clause that fired, if the grade had any.
    pub satisfied_condition: Option<String>,
}

/// First grade (from exact down) whose minimums and key conditions hold.
pub fn classify(v: &SimilarityVector, gr: &GradeRuleset) -> MatchGrade {
    for rule in &gr.grades {
        if v.combined < rule.score_min || v.confidence < rule.conf_min {
            continue;
        }
        if rule.key_conditions.is_empty() {
            return MatchGrade {
                grade: rule.grade,
                satisfied_condition: None,
            };
        }
        let fired = rule
            .key_conditions
            .iter()
            .find(|clause| clause.iter().all(|t| t.op.holds(v.get(t.metric), t.threshold)));
        if let Some(clause) = fired {
            return MatchGrade {
                grade: rule.grade,
                satisfied_condition: Some(describe_clause(clause)),
            };
        }
    }
    MatchGrade {
        grade: Grade::NoMatch,
        satisfied_condition: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FallbackEmbedder;
    use proptest::prelude::*;

    fn vector(combined: f64, confidence: f64) -> SimilarityVector {
        SimilarityVector {
            tfidf: 0.0,
            domain: 0.0,
            euclidean: 0.0,
            token_overlap: 0.0,
            keyword_overlap: 0.0,
            combined,
            confidence,
        }
    }

    #[test]
    fn combine_examples() {
        let w = MetricWeights::default();
        assert_eq!(combine([100.0; 5], &w), (100.0, 100.0));
        assert_eq!(combine([37.0; 5], &w).1, 100.0);
        let (c, conf) = combine([100.0, 0.0, 100.0, 0.0, 100.0], &w);
        // mean 60, variance (3·40² + 2·60²)/5 = 2400
        let sigma = 2400f64.sqrt();
        assert!((c - 60.0).abs() < 1e-9);
        assert!((sigma - 48.98979485566356).abs() < 1e-12);
        assert!((conf - 100.0 * (1.0 - sigma / 50.0)).abs() < 1e-9);
        assert!((conf - 2.0204).abs() < 1e-3);
    }

    #[test]
    fn normalization_values() {
        for (d, want) in [(0.0, 100.0), (1.0, 50.0), (2.0, 0.0), (3.0, 0.0)] {
            assert!((euclidean_similarity(d) - want).abs() < 1e-9);
        }
        for (d, want) in [(0.0, 100.0), (5.0, 50.0), (10.0, 0.0)] {
            assert!((manhattan_similarity(d) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn tfidf_oracle() {
        let docs = ["pump failed", "pump replaced", "claim filed"];
        let stats = CorpusStats::from_documents(&docs);
        assert_eq!(tfidf_similarity("pump failed", "pump failed", &stats), 100.0);
        assert_eq!(tfidf_similarity("pump failed", "claim filed", &stats), 0.0);
        assert_eq!(tfidf_similarity("...", "...", &stats), 0.0);
        // Hand evaluation: N = 3, df(pump) = 2, df(failed) = df(replaced) = 1.
        let idf_pump = (4.0f64 / 3.0).ln() + 1.0;
        let idf_one = (4.0f64 / 2.0).ln() + 1.0;
        let want = idf_pump * idf_pump / (idf_pump * idf_pump + idf_one * idf_one) * 100.0;
        let got = tfidf_similarity("pump failed", "pump replaced", &stats);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn overlap_examples() {
        let ex = Extractor::default();
        assert_eq!(overlap_scores("the pump failed", "the pump failed", &ex), (100.0, 100.0));
        let (tok, _) = overlap_scores("the pump failed", "the motor failed", &ex);
        assert_eq!(tok, 50.0);
        assert_eq!(overlap_scores("pump", "motor", &ex).1, 0.0);
        assert_eq!(overlap_scores("", "", &ex), (0.0, 0.0));
    }

    #[test]
    fn worked_grade_vectors() {
        let gr = GradeRuleset::default();
        let mut v = vector(96.0, 92.0);
        v.token_overlap = 91.0;
        let g = classify(&v, &gr);
        assert_eq!(g.grade, Grade::Exact);
        assert_eq!(g.satisfied_condition.as_deref(), Some("combined >= 95 and token_overlap >= 90"));

        let mut v = vector(80.0, 78.0);
        v.tfidf = 36.0;
        assert_eq!(classify(&v, &gr).grade, Grade::Strong);

        let mut v = vector(50.0, 45.0);
        v.tfidf = 22.0;
        assert_eq!(classify(&v, &gr).grade, Grade::Moderate);

        let g = classify(&vector(30.0, 5.0), &gr);
        assert_eq!(g, MatchGrade { grade: Grade::Weak, satisfied_condition: None });
        assert_eq!(classify(&vector(24.9, 100.0), &gr).grade, Grade::NoMatch);
    }

    #[test]
    fn grade_file_validation() {
        let bad = r#"{"grades": [{"grade": "weak", "score_min": 25, "conf_min": 0},
                                 {"grade": "exact", "score_min": 90, "conf_min": 90}]}"#;
        assert!(matches!(GradeRuleset::parse(bad), Err(GradeError::Invalid(_))));
        let aliases = r#"{"grades": [{"grade": "strong", "score_min": 75, "conf_min": 75,
            "key_conditions": [[{"metric": "overlap", "op": ">=", "threshold": 1}, {"metric": "keyword", "op": ">", "threshold": 1}]]}]}"#;
        let gr = GradeRuleset::parse(aliases).unwrap();
        assert_eq!(gr.grades[0].key_conditions[0][0].metric, Metric::TokenOverlap);
        assert_eq!(gr.metric_weights, MetricWeights::default());
        assert!(GradeRuleset::parse(r#"{"grades": [], "extra": 1}"#).is_err());
    }

    fn full_vector(a: &str, b: &str) -> SimilarityVector {
        let stats = CorpusStats::from_documents(&[a, b]);
        let p = FallbackEmbedder::default();
        let (ea, eb) = (p.vector(a), p.vector(b));
        score_pair(a, b, &ea, &eb, &stats, &Extractor::default(), &MetricWeights::default())
    }

    #[test]
    fn self_similarity_is_exact() {
        let a = "The infusion pump failed during operation.";
        let v = full_vector(a, a);
        assert_eq!(v.metrics(), [100.0; 5]);
        assert_eq!(classify(&v, &GradeRuleset::default()).grade, Grade::Exact);
    }

    fn arb_vector() -> impl Strategy<Value = SimilarityVector> {
        proptest::array::uniform5(0.0f64..=100.0)
            .prop_map(|m| SimilarityVector::from_metrics(m, &MetricWeights::default()))
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_bounded(a in "[a-z ]{0,30}", b in "[a-z ]{0,30}") {
            let ab = full_vector(&a, &b);
            let ba = full_vector(&b, &a);
            prop_assert_eq!(ab, ba);
            for x in ab.metrics().into_iter().chain([ab.combined, ab.confidence]) {
                prop_assert!((0.0..=100.0).contains(&x));
            }
        }

        #[test]
        fn normalizations_monotone(d1 in 0.0f64..20.0, d2 in 0.0f64..20.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(euclidean_similarity(lo) >= euclidean_similarity(hi));
            prop_assert!(manhattan_similarity(lo) >= manhattan_similarity(hi));
        }

        #[test]
        fn classification_is_total_and_consistent(v in arb_vector()) {
            let gr = GradeRuleset::default();
            let g = classify(&v, &gr);
            prop_assert_eq!(&g, &classify(&v, &gr));
            // The chosen grade's row holds and no higher row does.
            for rule in &gr.grades {
                let holds = v.combined >= rule.score_min
                    && v.confidence >= rule.conf_min
                    && (rule.key_conditions.is_empty()
                        || rule.key_conditions.iter().any(|c| c.iter().all(|t| t.op.holds(v.get(t.metric), t.threshold))));
                if rule.grade > g.grade {
                    prop_assert!(!holds);
                } else if rule.grade == g.grade {
                    prop_assert!(holds);
                }
            }
        }
    }
}
