//! Deterministic typed entity extraction.
//!
//! Dates, numeric values and identifiers come from regular-expression
//! patterns; statements from sentence segmentation; key phrases from TF-IDF
//! ranked word n-grams. Every entity carries a canonical form plus the set of
//! surface variants considered equivalent to it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{self, CorpusStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Date,
    Identifier,
    Numeric,
    Phrase,
    Statement,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Date,
        EntityKind::Identifier,
        EntityKind::Numeric,
        EntityKind::Phrase,
        EntityKind::Statement,
    ];

    /// Kinds verified by symbolic comparison.
    pub fn is_structured(self) -> bool {
        matches!(
            self,
            EntityKind::Date | EntityKind::Identifier | EntityKind::Numeric
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Date => "date",
            EntityKind::Identifier => "identifier",
            EntityKind::Numeric => "numeric",
            EntityKind::Phrase => "phrase",
            EntityKind::Statement => "statement",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input,
    Output,
}

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub canonical: String,
    /// Text as it appears at `span`.
    pub surface: String,
    pub variants: BTreeSet<String>,
    pub span: Span,
    pub source: Source,
}

impl Entity {
    /// Symbolic equivalence: same canonical form or a shared variant.
    pub fn equivalent(&self, other: &Entity) -> bool {
        self.kind == other.kind
            && (self.canonical == other.canonical
                || !self.variants.is_disjoint(&other.variants))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub entities: BTreeMap<EntityKind, Vec<Entity>>,
}

impl EntitySet {
    pub fn of_kind(&self, kind: EntityKind) -> &[Entity] {
        self.entities.get(&kind).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.of_kind(kind).len()
    }

    pub fn counts(&self) -> BTreeMap<EntityKind, usize> {
        self.entities.iter().map(|(k, v)| (*k, v.len())).collect()
    }

    pub fn len(&self) -> usize {
        self.entities.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values().flatten()
    }

    /// Adds an entity, merging it into an existing one with the same
    /// canonical form (the first occurrence keeps its span).
    pub fn insert(&mut self, e: Entity) {
        let group = self.entities.entry(e.kind).or_default();
        match group.iter_mut().find(|x| x.canonical == e.canonical) {
            Some(existing) => existing.variants.extend(e.variants),
            None => group.push(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Extra identifier patterns, applied alongside the built-in one.
    pub identifier_patterns: Vec<String>,
    pub units: Vec<String>,
    pub stopwords: Vec<String>,
    pub abbreviations: Vec<String>,
    pub phrase_top_k: usize,
    /// Locale tags whose decimal separators are recognized (`en` → `.`, `de` → `,`).
    pub decimal_locales: Vec<String>,
    /// Segments with fewer word tokens are not treated as statements.
    pub min_statement_tokens: usize,
}

const DEFAULT_STOPWORDS: &str = "a an and are as at be been but by did do does for from had has have he her his \
if in into is it its of on or our she so than that the their them then there these they this those to was we \
were what when where which who will with would you your not no also can may might must should could been being \
der die das den dem des ein eine einer eines einem einen und oder aber ist sind war waren wird werden wurde \
wurden hat haben hatte im in am an auf aus bei mit nach von vor zu zum zur für über unter durch als auch \
nicht kein keine es sie er wir ihr sich dass so wie noch nur";

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            identifier_patterns: Vec::new(),
            units: [
                "kg", "g", "mg", "t", "mm", "cm", "m", "km", "ml", "l", "h", "min", "s", "ms",
                "V", "mV", "kV", "A", "mA", "W", "kW", "Hz", "kHz", "MHz", "bar", "mbar", "Pa",
                "kPa", "°C", "K", "%", "MB", "GB", "EUR", "€", "USD",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            stopwords: DEFAULT_STOPWORDS.split_whitespace().map(String::from).collect(),
            abbreviations: [
                "z. B.", "z.B.", "d. h.", "d.h.", "u. a.", "u.a.", "bzw.", "ca.", "etc.", "usw.",
                "Nr.", "Dr.", "Prof.", "vgl.", "ggf.", "inkl.", "evtl.", "e.g.", "i.e.", "vs.",
                "approx.", "No.", "Mr.", "Mrs.", "Ms.", "Fig.", "Abb.",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            phrase_top_k: 5,
            decimal_locales: vec!["en".into(), "de".into()],
            min_statement_tokens: 3,
        }
    }
}

impl ExtractionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExtractError::Config {
            message: format!("{}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| ExtractError::Config {
            message: format!("{}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("identifier pattern `{pattern}` does not compile: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("unknown decimal locale `{0}`")]
    UnknownLocale(String),
    #[error("`{0}` is not a valid calendar date")]
    InvalidDate(String),
    #[error("invalid extraction config: {message}")]
    Config { message: String },
}

fn decimal_separator(locale: &str) -> Option<char> {
    let lang = locale.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
    match lang.as_str() {
        "en" | "ja" | "zh" | "ko" | "he" | "th" => Some('.'),
        "de" | "fr" | "es" | "it" | "nl" | "pt" | "pl" | "cs" | "da" | "sv" | "nb" | "fi"
        | "ru" | "tr" | "el" | "hu" | "ro" => Some(','),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
enum DateShape {
    Iso,
    Dotted,
    Slashed,
}

/// Compiled extraction configuration.
#[derive(Debug, Clone)]
pub struct Extractor {
    cfg: ExtractionConfig,
    dates: Vec<(DateShape, Regex)>,
    builtin_identifier: Regex,
    identifiers: Vec<Regex>,
    numeric: Regex,
    decimal_separators: Vec<char>,
    units: Vec<String>,
    stopwords: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: EntityKind,
    start: usize,
    end: usize,
    canonical: String,
}

impl Extractor {
    pub fn new(cfg: ExtractionConfig) -> Result<Self, ExtractError> {
        let dates = vec![
            (DateShape::Iso, r"\b(\d{4})-(\d{1,2})-(\d{1,2})\b"),
            (DateShape::Dotted, r"\b(\d{1,2})\.(\d{1,2})\.(\d{4})\b"),
            (DateShape::Slashed, r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b"),
        ]
        .into_iter()
        .map(|(shape, p)| (shape, Regex::new(p).expect("date pattern")))
        .collect();
        let identifiers = cfg
            .identifier_patterns
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|e| ExtractError::InvalidPattern {
                    pattern: p.clone(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut decimal_separators = Vec::new();
        for loc in &cfg.decimal_locales {
            let sep = decimal_separator(loc).ok_or_else(|| ExtractError::UnknownLocale(loc.clone()))?;
            if !decimal_separators.contains(&sep) {
                decimal_separators.push(sep);
            }
        }
        let numeric = if decimal_separators.is_empty() {
            Regex::new(r"\b\d+\b")
        } else {
            let class: String = decimal_separators.iter().map(|c| regex::escape(&c.to_string())).collect();
            Regex::new(&format!(r"\b\d+(?:[{class}]\d+)?\b"))
        }
        .expect("numeric pattern");
        let mut units = cfg.units.clone();
        units.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        let stopwords = cfg.stopwords.iter().map(|s| s.to_lowercase()).collect();
        Ok(Extractor {
            builtin_identifier: Regex::new(r"\b[A-Za-z]{2,4}-?[A-Za-z0-9]{3,}\b").expect("identifier pattern"),
            cfg,
            dates,
            identifiers,
            numeric,
            decimal_separators,
            units,
            stopwords,
        })
    }

    pub fn config(&self) -> &ExtractionConfig {
        &self.cfg
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Structured entities and statements, plus key phrases ranked against
    /// the text itself.
    pub fn extract_entities(&self, text: &str, source: Source) -> EntitySet {
        let stats = CorpusStats::from_documents(&[text]);
        self.extract_with_stats(text, source, &stats)
    }

    /// Like [`Self::extract_entities`], ranking key phrases against `stats`.
    pub fn extract_with_stats(&self, text: &str, source: Source, stats: &CorpusStats) -> EntitySet {
        let mut set = EntitySet::default();
        for e in self.extract_structured(text, source) {
            set.insert(e);
        }
        for e in self.segment_statements(text, source) {
            if text::tokenize(&e.canonical).len() >= self.cfg.min_statement_tokens {
                set.insert(e);
            }
        }
        for e in self.extract_key_phrases(text, source, stats) {
            set.insert(e);
        }
        set
    }

    /// Dates, identifiers and numerics, overlaps resolved longest-first then
    /// leftmost, returned in text order.
    pub fn extract_structured(&self, text: &str, source: Source) -> Vec<Entity> {
        let mut cands = Vec::new();
        for (shape, re) in &self.dates {
            for c in re.captures_iter(text) {
                let m = c.get(0).expect("match");
                let num = |i: usize| c[i].parse::<u32>().unwrap_or(0);
                let (y, mo, d) = match shape {
                    DateShape::Iso => (num(1) as i32, num(2), num(3)),
                    DateShape::Dotted | DateShape::Slashed => (num(3) as i32, num(2), num(1)),
                };
                if let Some(date) = NaiveDate::from_ymd_opt(y, mo, d) {
                    cands.push(Candidate {
                        kind: EntityKind::Date,
                        start: m.start(),
                        end: m.end(),
                        canonical: date.format("%Y-%m-%d").to_string(),
                    });
                }
            }
        }
        for m in self.builtin_identifier.find_iter(text) {
            if m.as_str().chars().any(|c| c.is_ascii_digit()) {
                cands.push(Candidate {
                    kind: EntityKind::Identifier,
                    start: m.start(),
                    end: m.end(),
                    canonical: canonical_identifier(m.as_str()),
                });
            }
        }
        for re in &self.identifiers {
            for m in re.find_iter(text).filter(|m| !m.is_empty()) {
                cands.push(Candidate {
                    kind: EntityKind::Identifier,
                    start: m.start(),
                    end: m.end(),
                    canonical: canonical_identifier(m.as_str()),
                });
            }
        }
        for m in self.numeric.find_iter(text) {
            let (start, end, canonical) = self.numeric_candidate(text, m.start(), m.end());
            cands.push(Candidate {
                kind: EntityKind::Numeric,
                start,
                end,
                canonical,
            });
        }

        let priority = |k: EntityKind| match k {
            EntityKind::Date => 0,
            EntityKind::Identifier => 1,
            _ => 2,
        };
        cands.sort_by(|a, b| {
            (b.end - b.start)
                .cmp(&(a.end - a.start))
                .then(a.start.cmp(&b.start))
                .then(priority(a.kind).cmp(&priority(b.kind)))
        });
        let mut taken: Vec<Candidate> = Vec::new();
        for c in cands {
            if taken.iter().all(|t| c.end <= t.start || c.start >= t.end) {
                taken.push(c);
            }
        }
        taken.sort_by_key(|c| c.start);
        taken
            .into_iter()
            .map(|c| {
                let surface = text[c.start..c.end].to_string();
                let mut e = Entity {
                    kind: c.kind,
                    canonical: c.canonical,
                    surface,
                    variants: BTreeSet::new(),
                    span: Span {
                        start: text::byte_to_char(text, c.start),
                        end: text::byte_to_char(text, c.end),
                    },
                    source,
                };
                self.fill_variants(&mut e);
                e
            })
            .collect()
    }

    fn numeric_candidate(&self, text: &str, start: usize, end: usize) -> (usize, usize, String) {
        let mut start = start;
        let before: Vec<char> = text[..start].chars().rev().take(2).collect();
        let mut negative = false;
        if let Some(&sign) = before.first() {
            if (sign == '-' || sign == '+') && before.get(1).is_none_or(|c| !c.is_alphanumeric()) {
                negative = sign == '-';
                start -= 1;
            }
        }
        let digits = &text[if negative || text[start..].starts_with('+') { start + 1 } else { start }..end];
        let mut end = end;
        let rest = &text[end..];
        let (gap, after_gap) = match rest.strip_prefix(' ') {
            Some(r) => (1, r),
            None => (0, rest),
        };
        let mut unit = None;
        for u in &self.units {
            if let Some(tail) = after_gap.strip_prefix(u.as_str()) {
                let ends_alnum = u.chars().last().is_some_and(char::is_alphanumeric);
                if !ends_alnum || !tail.chars().next().is_some_and(char::is_alphanumeric) {
                    unit = Some(u.clone());
                    end += gap + u.len();
                    break;
                }
            }
        }
        let mut canonical = canonical_number(digits, &self.decimal_separators);
        if negative && canonical != "0" {
            canonical.insert(0, '-');
        }
        if let Some(u) = unit {
            canonical.push(' ');
            canonical.push_str(&u);
        }
        (start, end, canonical)
    }

    fn fill_variants(&self, e: &mut Entity) {
        e.variants.insert(e.surface.clone());
        e.variants.insert(e.canonical.clone());
        match e.kind {
            EntityKind::Date => {
                if let Ok(date) = NaiveDate::parse_from_str(&e.canonical, "%Y-%m-%d") {
                    e.variants.extend(date_variants(date));
                }
            }
            EntityKind::Numeric => {
                for sep in &self.decimal_separators {
                    e.variants.insert(e.canonical.replacen('.', &sep.to_string(), 1));
                }
            }
            EntityKind::Identifier => {
                e.variants.insert(e.surface.to_uppercase());
                if let Some(h) = hyphenated_identifier(&e.canonical) {
                    e.variants.insert(h);
                }
            }
            EntityKind::Phrase | EntityKind::Statement => {}
        }
    }

    /// Recomputes the variant set of an entity from its canonical form.
    pub fn normalize_variants(&self, e: &Entity) -> Result<Entity, ExtractError> {
        if e.kind == EntityKind::Date
            && NaiveDate::parse_from_str(&e.canonical, "%Y-%m-%d").is_err()
        {
            return Err(ExtractError::InvalidDate(e.canonical.clone()));
        }
        let mut out = e.clone();
        out.variants.clear();
        self.fill_variants(&mut out);
        Ok(out)
    }

    fn abbreviation_at(&self, text: &str, dot: usize) -> bool {
        for abbr in &self.cfg.abbreviations {
            for (k, _) in abbr.match_indices('.') {
                let Some(start) = dot.checked_sub(k) else { continue };
                let Some(window) = text.get(start..start + abbr.len()) else { continue };
                if !window.eq_ignore_ascii_case(abbr) {
                    continue;
                }
                let boundary = text[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
                if boundary {
                    return true;
                }
            }
        }
        false
    }

    /// Sentence-like segments in text order. Segments end at terminal
    /// punctuation followed by whitespace (unless it belongs to a configured
    /// abbreviation) and at line breaks.
    pub fn segment_statements(&self, text: &str, source: Source) -> Vec<Entity> {
        let mut bounds = Vec::new();
        let mut seg_start = 0;
        let mut iter = text.char_indices().peekable();
        while let Some((i, c)) = iter.next() {
            let mut cut = None;
            if c == '\n' {
                cut = Some(i);
            } else if matches!(c, '.' | '!' | '?' | '…') {
                // Swallow runs like `?!` and closing quotes or brackets.
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = iter.peek() {
                    if matches!(d, '.' | '!' | '?' | '…' | '"' | '\'' | ')' | ']' | '»' | '“' | '”') {
                        end = j + d.len_utf8();
                        iter.next();
                    } else {
                        break;
                    }
                }
                let at_break = text[end..].chars().next().is_none_or(char::is_whitespace);
                if at_break && !(c == '.' && self.abbreviation_at(text, i)) {
                    cut = Some(end);
                }
            }
            if let Some(end) = cut {
                bounds.push((seg_start, end));
                seg_start = end;
            }
        }
        bounds.push((seg_start, text.len()));

        bounds
            .into_iter()
            .filter_map(|(s, e)| {
                let seg = &text[s..e];
                let lead = seg.len() - seg.trim_start().len();
                let trimmed = seg.trim();
                if trimmed.is_empty() {
                    return None;
                }
                let b0 = s + lead;
                let b1 = b0 + trimmed.len();
                let canonical = text::normalize_whitespace(trimmed);
                Some(Entity {
                    kind: EntityKind::Statement,
                    variants: [canonical.clone(), trimmed.to_string()].into_iter().collect(),
                    canonical,
                    surface: trimmed.to_string(),
                    span: Span {
                        start: text::byte_to_char(text, b0),
                        end: text::byte_to_char(text, b1),
                    },
                    source,
                })
            })
            .collect()
    }

    /// Top-k word bigrams and trigrams ranked by summed token TF-IDF.
    /// Candidates skip stopwords, single letters, digit-bearing tokens and
    /// structured entities, and never cross a line break or punctuation
    /// other than a hyphen.
    pub fn extract_key_phrases(&self, text: &str, source: Source, stats: &CorpusStats) -> Vec<Entity> {
        let k = self.cfg.phrase_top_k;
        if k == 0 {
            return Vec::new();
        }
        // Byte ranges of structured entities.
        let structured: Vec<(usize, usize)> = self
            .extract_structured(text, source)
            .iter()
            .filter_map(|e| Some((text::char_to_byte(text, e.span.start)?, text::char_to_byte(text, e.span.end)?)))
            .collect();
        let tokens = text::tokenize_with_offsets(text);
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for (t, _, _) in &tokens {
            *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        let weight = |t: &str| tf.get(t).copied().unwrap_or(0.0) * stats.idf(t);

        let mut runs: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for (i, (tok, start, _)) in tokens.iter().enumerate() {
            let end = tokens[i].2;
            let usable = !self.is_stopword(tok)
                && tok.chars().count() >= 2
                && tok.chars().all(char::is_alphabetic)
                && !structured.iter().any(|&(s, e)| *start < e && s < end);
            let separated = i > 0 && {
                let gap = &text[tokens[i - 1].2..*start];
                gap.chars().any(|c| c == '\n' || (!c.is_whitespace() && c != '-'))
            };
            if !usable || separated {
                if current.len() >= 2 {
                    runs.push(std::mem::take(&mut current));
                }
                current.clear();
            }
            if usable {
                current.push(i);
            }
        }
        if current.len() >= 2 {
            runs.push(current);
        }

        // canonical -> (score, first start byte, first end byte)
        let mut scored: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
        for run in &runs {
            for n in 2..=3 {
                for w in run.windows(n) {
                    let canonical = w.iter().map(|&i| tokens[i].0.as_str()).collect::<Vec<_>>().join(" ");
                    let score: f64 = w.iter().map(|&i| weight(&tokens[i].0)).sum();
                    let (s, e) = (tokens[w[0]].1, tokens[w[n - 1]].2);
                    scored.entry(canonical).or_insert((score, s, e));
                }
            }
        }
        let mut ranked: Vec<(String, f64, usize, usize)> =
            scored.into_iter().map(|(c, (sc, s, e))| (c, sc, s, e)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k)
            .map(|(canonical, _, s, e)| {
                let surface = text[s..e].to_string();
                Entity {
                    kind: EntityKind::Phrase,
                    variants: [canonical.clone(), surface.clone()].into_iter().collect(),
                    canonical,
                    surface,
                    span: Span {
                        start: text::byte_to_char(text, s),
                        end: text::byte_to_char(text, e),
                    },
                    source,
                }
            })
            .collect()
    }
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::new(ExtractionConfig::default()).expect("default extraction config")
    }
}

fn canonical_identifier(s: &str) -> String {
    s.chars().filter(|c| *c != '-').flat_map(char::to_uppercase).collect()
}

/// `BF1HTJ0` -> `BF-1HTJ0`: hyphen after the leading letter run.
fn hyphenated_identifier(canonical: &str) -> Option<String> {
    let letters = canonical.chars().take_while(char::is_ascii_alphabetic).count();
    (letters > 0 && letters < canonical.len())
        .then(|| format!("{}-{}", &canonical[..letters], &canonical[letters..]))
}

fn canonical_number(digits: &str, separators: &[char]) -> String {
    let (int, frac) = match digits.find(|c: char| separators.contains(&c)) {
        Some(p) => (&digits[..p], &digits[p + 1..]),
        None => (digits, ""),
    };
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{frac}")
    }
}

fn date_variants(date: NaiveDate) -> [String; 3] {
    let (d, m, y) = (date.day(), date.month(), date.year());
    [
        format!("{y:04}-{m:02}-{d:02}"),
        format!("{d:02}.{m:02}.{y:04}"),
        format!("{d:02}/{m:02}/{y:04}"),
    ]
}
