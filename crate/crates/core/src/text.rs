//! Shared text utilities: word tokenization, corpus statistics for TF-IDF,
//! and conversions between byte and character offsets.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("word pattern"))
}

/// Lowercased Unicode word tokens, in order of appearance.
pub fn tokenize(text: &str) -> Vec<String> {
    word_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// Lowercased tokens together with their byte ranges in `text`.
pub fn tokenize_with_offsets(text: &str) -> Vec<(String, usize, usize)> {
    word_re()
        .find_iter(text)
        .map(|m| (m.as_str().to_lowercase(), m.start(), m.end()))
        .collect()
}

/// Distinct lowercased tokens.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Whitespace-delimited token count, used for retrieval budgets.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses runs of whitespace into single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Converts a byte offset into a character offset.
pub fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Slices `text` by character offsets. Returns `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = char_to_byte(text, start)?;
    let b1 = char_to_byte(text, end)?;
    Some(&text[b0..b1])
}

/// Byte offset of the given character offset (`len` maps to `text.len()`).
pub fn char_to_byte(text: &str, ch: usize) -> Option<usize> {
    if ch == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in text.char_indices() {
        if count == ch {
            return Some(b);
        }
        count += 1;
    }
    (count == ch).then_some(text.len())
}

/// Document frequencies over a declared corpus.
///
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, so tokens never seen in the
/// corpus still receive a finite weight.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub document_frequency: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut stats = CorpusStats::default();
        for doc in docs {
            stats.add_document(doc.as_ref());
        }
        stats
    }

    pub fn add_document(&mut self, doc: &str) {
        self.documents += 1;
        for tok in token_set(doc) {
            *self.document_frequency.entry(tok).or_insert(0) += 1;
        }
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.document_frequency.get(token).copied().unwrap_or(0);
        ((1.0 + self.documents as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Sparse TF-IDF vector with raw term counts as TF.
    pub fn tfidf_vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            *tf.entry(tok).or_insert(0.0) += 1.0;
        }
        tf.into_iter()
            .map(|(t, c)| {
                let w = c * self.idf(&t);
                (t, w)
            })
            .collect()
    }
}
