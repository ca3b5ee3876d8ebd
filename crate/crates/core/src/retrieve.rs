//! Hybrid-narrowing retrieval over a section-typed corpus.
//!
//! A query is decomposed into case ids, section types and schema terms.
//! Direct case ids and section types filter the corpus; term hits and
//! tentative case ids only move chunks into the first priority tier.
//! Candidates are then ranked by exact cosine similarity to the query and
//! packed greedily into a whitespace-token budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{embed_all, EmbedError, EmbeddingProvider, Vector};
use crate::extract::{Extractor, Source};
use crate::simmetrics::cosine;
use crate::text;

pub const INDEX_SCHEMA_VERSION: u32 = 1;
pub const TOKENIZER_ID: &str = "whitespace";
pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionType {
    Narrative,
    Technical,
    Legal,
    Evidence,
}

impl SectionType {
    pub const ALL: [SectionType; 4] = [
        SectionType::Narrative,
        SectionType::Technical,
        SectionType::Legal,
        SectionType::Evidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionType::Narrative => "narrative",
            SectionType::Technical => "technical",
            SectionType::Legal => "legal",
            SectionType::Evidence => "evidence",
        }
    }
}

impl fmt::Display for SectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SectionType {
    type Err = RetrieveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SectionType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| RetrieveError::UnknownSection(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("unknown section_type `{0}` (expected narrative, technical, legal or evidence)")]
    UnknownSection(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index was built with `{index}` but the query provider is `{provider}`")]
    ModelMismatch { index: String, provider: String },
    #[error("case-id pattern `{pattern}` does not compile: {message}")]
    Pattern { pattern: String, message: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> RetrieveError {
    RetrieveError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Corpus document before chunking. `section_type` stays a string so an
/// unknown value is reported by [`index_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub report_id: String,
    pub section_type: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: u64,
    pub report_id: String,
    pub section_type: SectionType,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Direct,
    Tentative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRef {
    pub id: String,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    /// Schema spelling of the term.
    pub term: String,
    pub association: String,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub report_ids: Vec<ReportRef>,
    pub section_types: Vec<SectionType>,
    pub terms: Vec<TermMatch>,
    /// Query text left after removing recognized constraints.
    pub free_text: String,
}

impl StructuredQuery {
    pub fn direct_report_ids(&self) -> BTreeSet<&str> {
        self.report_ids
            .iter()
            .filter(|r| r.confidence == Confidence::Direct)
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.report_ids.is_empty() && self.section_types.is_empty() && self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaTerm {
    pub term: String,
    pub association: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySchema {
    pub case_id_patterns: Vec<String>,
    pub terms: Vec<SchemaTerm>,
    pub section_keywords: BTreeMap<String, SectionType>,
    /// Largest edit distance for a tentative term hit.
    pub fuzzy_distance: usize,
}

impl Default for QuerySchema {
    fn default() -> Self {
        let kw = [
            ("narrative", SectionType::Narrative),
            ("description", SectionType::Narrative),
            ("summary", SectionType::Narrative),
            ("account", SectionType::Narrative),
            ("technical", SectionType::Technical),
            ("datasheet", SectionType::Technical),
            ("specification", SectionType::Technical),
            ("specifications", SectionType::Technical),
            ("legal", SectionType::Legal),
            ("contract", SectionType::Legal),
            ("obligation", SectionType::Legal),
            ("obligations", SectionType::Legal),
            ("liability", SectionType::Legal),
            ("warranty", SectionType::Legal),
            ("evidence", SectionType::Evidence),
            ("attachment", SectionType::Evidence),
            ("attachments", SectionType::Evidence),
            ("proof", SectionType::Evidence),
            ("photos", SectionType::Evidence),
        ];
        QuerySchema {
            case_id_patterns: vec![r"\b[A-Z]{1,3}-\d{2,}\b".to_string()],
            terms: Vec::new(),
            section_keywords: kw.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            fuzzy_distance: 1,
        }
    }
}

impl QuerySchema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrieveError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

/// Splits a query into structured constraints and residual free text.
pub fn decompose_query(q: &str, schema: &QuerySchema) -> Result<StructuredQuery, RetrieveError> {
    let mut sq = StructuredQuery::default();
    let mut consumed: Vec<(usize, usize)> = Vec::new();

    for p in &schema.case_id_patterns {
        let compile = |src: String| {
            Regex::new(&src).map_err(|e| RetrieveError::Pattern {
                pattern: p.clone(),
                message: e.to_string(),
            })
        };
        let exact = compile(p.clone())?;
        let loose = compile(format!("(?i){p}"))?;
        for m in exact.find_iter(q) {
            push_report(&mut sq, m.as_str().to_string(), Confidence::Direct);
            consumed.push((m.start(), m.end()));
        }
        for m in loose.find_iter(q) {
            if consumed.iter().any(|(s, e)| m.start() < *e && *s < m.end()) {
                continue;
            }
            push_report(&mut sq, m.as_str().to_uppercase(), Confidence::Tentative);
            consumed.push((m.start(), m.end()));
        }
    }

    let tokens = text::tokenize_with_offsets(q);
    for (tok, s, e) in &tokens {
        if let Some(t) = schema.section_keywords.get(tok.as_str()) {
            if !sq.section_types.contains(t) {
                sq.section_types.push(*t);
            }
            consumed.push((*s, *e));
        }
    }

    for st in &schema.terms {
        let words = text::tokenize(&st.term);
        if words.is_empty() {
            continue;
        }
        let n = words.len();
        let target = words.join(" ");
        let mut best: Option<(Confidence, usize, usize)> = None;
        for w in tokens.windows(n) {
            let joined = w.iter().map(|t| t.0.as_str()).collect::<Vec<_>>().join(" ");
            let span = (w[0].1, w[n - 1].2);
            if joined == target {
                best = Some((Confidence::Direct, span.0, span.1));
                break;
            }
            let fuzzy = target.chars().count() >= 4
                && strsim::levenshtein(&joined, &target) <= schema.fuzzy_distance;
            if fuzzy && best.is_none() {
                best = Some((Confidence::Tentative, span.0, span.1));
            }
        }
        if let Some((confidence, s, e)) = best {
            sq.terms.push(TermMatch {
                term: st.term.clone(),
                association: st.association.clone(),
                confidence,
            });
            if confidence == Confidence::Direct {
                consumed.push((s, e));
            }
        }
    }

    sq.free_text = if sq.is_unconstrained() {
        q.trim().to_string()
    } else {
        consumed.sort();
        let mut residual = String::new();
        let mut at = 0;
        for (s, e) in consumed {
            if s >= at {
                residual.push_str(&q[at..s]);
                residual.push(' ');
            }
            at = at.max(e);
        }
        residual.push_str(&q[at..]);
        text::normalize_whitespace(&residual)
    };
    Ok(sq)
}

fn push_report(sq: &mut StructuredQuery, id: String, confidence: Confidence) {
    if !sq.report_ids.iter().any(|r| r.id == id) {
        sq.report_ids.push(ReportRef { id, confidence });
    }
}

/// Chunks with their embeddings and a token → chunk-id map.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    pub chunks: Vec<Chunk>,
    /// Row `i` belongs to `chunks[i]`.
    pub vectors: Vec<Vector>,
    pub term_map: BTreeMap<String, BTreeSet<u64>>,
    pub dimension: usize,
    pub model_id: String,
    pub tokenizer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub schema_version: u32,
    pub dimension: usize,
    pub model_id: String,
    pub tokenizer: String,
    pub chunk_count: usize,
}

fn split_oversize(statement: &str, max_tokens: usize) -> Vec<String> {
    let words: Vec<&str> = statement.split_whitespace().collect();
    words.chunks(max_tokens.max(1)).map(|w| w.join(" ")).collect()
}

/// Packs statements of `text` into pieces of at most `max_tokens`
/// whitespace tokens. Statements are never merged across a piece boundary;
/// a statement longer than the cap is cut into cap-sized runs.
pub fn chunk_text(text: &str, max_tokens: usize, ex: &Extractor) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_tokens = 0;
    for st in ex.segment_statements(text, Source::Input) {
        for piece in split_oversize(&st.canonical, max_tokens) {
            let n = text::whitespace_token_count(&piece);
            if current_tokens + n > max_tokens && !current.is_empty() {
                out.push(current.join(" "));
                current.clear();
                current_tokens = 0;
            }
            current.push(piece);
            current_tokens += n;
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}

fn build_term_map(chunks: &[Chunk]) -> BTreeMap<String, BTreeSet<u64>> {
    let mut map: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    for c in chunks {
        for t in text::token_set(&c.text) {
            map.entry(t).or_default().insert(c.id);
        }
    }
    map
}

/// Chunks and embeds a corpus. Chunk ids follow document then chunk order.
pub fn index_corpus(
    docs: &[SourceDoc],
    p: &dyn EmbeddingProvider,
    max_tokens: usize,
    ex: &Extractor,
) -> Result<CorpusIndex, RetrieveError> {
    let mut chunks = Vec::new();
    for d in docs {
        let section: SectionType = d.section_type.parse()?;
        for piece in chunk_text(&d.text, max_tokens, ex) {
            chunks.push(Chunk {
                id: chunks.len() as u64,
                report_id: d.report_id.clone(),
                section_type: section,
                token_count: text::whitespace_token_count(&piece),
                text: piece,
            });
        }
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embed_all(p, &texts)?;
    Ok(CorpusIndex {
        term_map: build_term_map(&chunks),
        chunks,
        vectors,
        dimension: p.info().dimension,
        model_id: p.info().model_id.clone(),
        tokenizer: TOKENIZER_ID.to_string(),
    })
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn meta(&self) -> IndexMeta {
        IndexMeta {
            schema_version: INDEX_SCHEMA_VERSION,
            dimension: self.dimension,
            model_id: self.model_id.clone(),
            tokenizer: self.tokenizer.clone(),
            chunk_count: self.chunks.len(),
        }
    }

    /// Writes `chunks.jsonl`, `vectors.f32` and `meta.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrieveError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

        let path = dir.join("chunks.jsonl");
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for c in &self.chunks {
            serde_json::to_writer(&mut w, c).map_err(|e| io_err(&path, e))?;
            w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;

        let path = dir.join("vectors.f32");
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for row in &self.vectors {
            for x in row {
                w.write_all(&x.to_le_bytes()).map_err(|e| io_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| io_err(&path, e))?;

        let path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta()).map_err(|e| io_err(&path, e))?;
        fs::write(&path, meta + "\n").map_err(|e| io_err(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RetrieveError> {
        let dir = dir.as_ref();
        let path = dir.join("meta.json");
        let meta: IndexMeta = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| io_err(&path, e))?)
            .map_err(|e| io_err(&path, e))?;
        if meta.schema_version != INDEX_SCHEMA_VERSION {
            return Err(RetrieveError::Corrupt(format!("unsupported schema_version {}", meta.schema_version)));
        }

        let path = dir.join("chunks.jsonl");
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        let mut chunks = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let c: Chunk = serde_json::from_str(&line).map_err(|e| io_err(&path, format!("line {}: {e}", n + 1)))?;
            chunks.push(c);
        }
        if chunks.len() != meta.chunk_count {
            return Err(RetrieveError::Corrupt(format!(
                "meta.json lists {} chunks, chunks.jsonl has {}",
                meta.chunk_count,
                chunks.len()
            )));
        }

        let path = dir.join("vectors.f32");
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| io_err(&path, e))?;
        if bytes.len() != chunks.len() * meta.dimension * 4 {
            return Err(RetrieveError::Corrupt(format!(
                "vectors.f32 has {} bytes, expected {}",
                bytes.len(),
                chunks.len() * meta.dimension * 4
            )));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let vectors = if meta.dimension == 0 {
            vec![Vec::new(); chunks.len()]
        } else {
            floats.chunks(meta.dimension).map(<[f32]>::to_vec).collect()
        };
        Ok(CorpusIndex {
            term_map: build_term_map(&chunks),
            chunks,
            vectors,
            dimension: meta.dimension,
            model_id: meta.model_id,
            tokenizer: meta.tokenizer,
        })
    }

    fn has_all_tokens(&self, id: u64, words: &[String]) -> bool {
        words
            .iter()
            .all(|w| self.term_map.get(w).is_some_and(|ids| ids.contains(&id)))
    }
}

/// A chunk admitted by narrowing; tier 0 ranks before tier 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub tier: u8,
}

/// Applies direct report ids and section types as filters. Term hits and
/// tentative report ids put matching chunks in tier 0 and the rest in tier 1.
pub fn narrow(idx: &CorpusIndex, sq: &StructuredQuery) -> Vec<Candidate> {
    let direct = sq.direct_report_ids();
    let tentative: BTreeSet<String> = sq
        .report_ids
        .iter()
        .filter(|r| r.confidence == Confidence::Tentative)
        .map(|r| r.id.to_uppercase())
        .collect();
    let term_words: Vec<Vec<String>> = sq.terms.iter().map(|t| text::tokenize(&t.term)).collect();
    let prioritized = !tentative.is_empty() || !term_words.is_empty();

    idx.chunks
        .iter()
        .enumerate()
        .filter(|(_, c)| direct.is_empty() || direct.contains(c.report_id.as_str()))
        .filter(|(_, c)| sq.section_types.is_empty() || sq.section_types.contains(&c.section_type))
        .map(|(i, c)| {
            let hit = tentative.contains(&c.report_id.to_uppercase())
                || term_words.iter().any(|w| idx.has_all_tokens(c.id, w));
            Candidate {
                index: i,
                tier: if !prioritized || hit { 0 } else { 1 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk_id: u64,
    pub report_id: String,
    pub section_type: SectionType,
    pub tier: u8,
    pub similarity: f64,
    pub token_count: usize,
    pub cumulative_tokens: usize,
    pub text: String,
}

/// Orders candidates by (tier, descending cosine, chunk id) and keeps each
/// chunk that still fits in the budget.
pub fn rank(
    idx: &CorpusIndex,
    candidates: &[Candidate],
    q: &str,
    p: &dyn EmbeddingProvider,
    budget: usize,
) -> Result<Vec<RankedChunk>, RetrieveError> {
    if candidates.is_empty() || budget == 0 {
        return Ok(Vec::new());
    }
    if p.info().model_id != idx.model_id || p.info().dimension != idx.dimension {
        return Err(RetrieveError::ModelMismatch {
            index: idx.model_id.clone(),
            provider: p.info().model_id.clone(),
        });
    }
    let qv = p.embed(q)?;
    let mut scored: Vec<(Candidate, f64)> = candidates
        .iter()
        .map(|c| (*c, cosine(&qv, &idx.vectors[c.index])))
        .collect();
    scored.sort_by(|(a, sa), (b, sb)| {
        a.tier
            .cmp(&b.tier)
            .then(sb.total_cmp(sa))
            .then(idx.chunks[a.index].id.cmp(&idx.chunks[b.index].id))
    });
    let mut used = 0;
    let mut out = Vec::new();
    for (c, sim) in scored {
        let chunk = &idx.chunks[c.index];
        if used + chunk.token_count > budget {
            continue;
        }
        used += chunk.token_count;
        out.push(RankedChunk {
            chunk_id: chunk.id,
            report_id: chunk.report_id.clone(),
            section_type: chunk.section_type,
            tier: c.tier,
            similarity: sim,
            token_count: chunk.token_count,
            cumulative_tokens: used,
            text: chunk.text.clone(),
        });
    }
    Ok(out)
}

/// Decompose, narrow and rank in one call.
pub fn retrieve(
    idx: &CorpusIndex,
    q: &str,
    schema: &QuerySchema,
    p: &dyn EmbeddingProvider,
    budget: usize,
) -> Result<(StructuredQuery, Vec<RankedChunk>), RetrieveError> {
    let sq = decompose_query(q, schema)?;
    let cands = narrow(idx, &sq);
    let ranked = rank(idx, &cands, q, p, budget)?;
    Ok((sq, ranked))
}
