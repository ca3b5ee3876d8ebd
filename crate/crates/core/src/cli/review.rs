//! Review of suggested corrections. The original output is only read; the
//! result goes to a separate file.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{read_text, ReviewArgs};
use crate::coverage::SuggestionAction;
use crate::pipeline::AuditLog;
use crate::report::{ReviewView, SuggestionView};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
    /// Apply with a replacement typed by the reviewer.
    Edit(String),
}

impl Decision {
    fn name(&self) -> &'static str {
        match self {
            Decision::Accept => "accepted",
            Decision::Reject => "rejected",
            Decision::Edit(_) => "edited",
        }
    }
}

fn char_range(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    if end < start {
        return None;
    }
    Some((text::char_to_byte(text, start)?, text::char_to_byte(text, end)?))
}

/// Checks every replacement span against `text` before anything is applied.
fn check_spans(text: &str, suggestions: &[SuggestionView]) -> Result<(), String> {
    for (i, s) in suggestions.iter().enumerate() {
        if s.replacement.is_none() {
            return Err("report carries no excerpts; rerun verify with --include-spans".into());
        }
        if s.action != SuggestionAction::Replace {
            continue;
        }
        let (Some(span), Some(original)) = (s.span, s.original.as_deref()) else {
            return Err(format!("suggestion {i}: replacement without a span"));
        };
        match char_range(text, span.start, span.end) {
            Some((b0, b1)) if &text[b0..b1] == original => {}
            _ => return Err(format!("suggestion {i}: span {}..{} does not match the output", span.start, span.end)),
        }
    }
    Ok(())
}

/// Applies accepted and edited suggestions. Replacements are applied right
/// to left so earlier spans stay valid; one overlapping an already applied
/// span is skipped. Insertions are appended as new lines.
pub fn apply_decisions(
    text: &str,
    suggestions: &[SuggestionView],
    decisions: &[Decision],
) -> Result<String, String> {
    check_spans(text, suggestions)?;
    let mut replacements: Vec<(usize, usize, String)> = Vec::new();
    let mut inserts: Vec<String> = Vec::new();
    for (s, d) in suggestions.iter().zip(decisions) {
        let value = match d {
            Decision::Reject => continue,
            Decision::Accept => s.replacement.clone().unwrap_or_default(),
            Decision::Edit(v) => v.clone(),
        };
        match (s.action, s.span) {
            (SuggestionAction::Replace, Some(span)) => replacements.push((span.start, span.end, value)),
            _ => inserts.push(value),
        }
    }
    replacements.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut out = text.to_string();
    let mut floor = usize::MAX;
    for (start, end, value) in replacements {
        if end > floor {
            continue;
        }
        let (b0, b1) = char_range(&out, start, end).expect("span checked");
        out.replace_range(b0..b1, &value);
        floor = start;
    }
    for value in inserts {
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&value);
        out.push('\n');
    }
    Ok(out)
}

fn default_out(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    let name = match output.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}.reviewed.{ext}"),
        None => format!("{stem}.reviewed"),
    };
    output.with_file_name(name)
}

fn prompt(s: &SuggestionView, i: usize, n: usize, input: &mut dyn BufRead, err: &mut dyn Write) -> Decision {
    let original = s.original.as_deref().unwrap_or("");
    let replacement = s.replacement.as_deref().unwrap_or("");
    let _ = match s.action {
        SuggestionAction::Replace => writeln!(err, "[{}/{n}] {}: replace {original:?} with {replacement:?}", i + 1, s.reason),
        SuggestionAction::Insert => writeln!(err, "[{}/{n}] {}: insert {replacement:?}", i + 1, s.reason),
    };
    let mut line = String::new();
    loop {
        let _ = write!(err, "(a)ccept, (r)eject, (e)dit? ");
        let _ = err.flush();
        line.clear();
        if input.read_line(&mut line).unwrap_or(0) == 0 {
            return Decision::Reject;
        }
        match line.trim() {
            "a" | "accept" => return Decision::Accept,
            "r" | "reject" => return Decision::Reject,
            "e" | "edit" => {
                let _ = write!(err, "replacement: ");
                let _ = err.flush();
                line.clear();
                if input.read_line(&mut line).unwrap_or(0) == 0 {
                    return Decision::Reject;
                }
                return Decision::Edit(line.trim_end_matches(['\r', '\n']).to_string());
            }
            _ => {}
        }
    }
}

pub(super) fn cmd_review(a: &ReviewArgs) -> Result<i32, String> {
    let report: ReviewView =
        serde_json::from_str(&read_text(&a.report)?).map_err(|e| format!("{}: {e}", a.report.display()))?;
    let text = read_text(&a.output)?;
    let out_path = a.out.clone().unwrap_or_else(|| default_out(&a.output));
    let same = |p: &Path, q: &Path| match (fs::canonicalize(p), fs::canonicalize(q)) {
        (Ok(x), Ok(y)) => x == y,
        _ => p == q,
    };
    if same(&out_path, &a.output) {
        return Err("refusing to overwrite the original output".into());
    }
    let suggestions = report.coverage.map(|c| c.suggestions).unwrap_or_default();
    check_spans(&text, &suggestions)?;

    let decisions: Vec<Decision> = if a.accept_all_safe {
        suggestions
            .iter()
            .map(|s| if s.safe { Decision::Accept } else { Decision::Reject })
            .collect()
    } else {
        let stdin = io::stdin();
        let mut input = stdin.lock();
        let mut err = io::stderr();
        let n = suggestions.len();
        suggestions
            .iter()
            .enumerate()
            .map(|(i, s)| prompt(s, i, n, &mut input, &mut err))
            .collect()
    };
    let corrected = apply_decisions(&text, &suggestions, &decisions)?;

    let audit = match &a.audit_log {
        Some(p) => AuditLog::open(p, &report.job_id).map_err(|e| format!("{}: {e}", p.display()))?,
        None => AuditLog::disabled(),
    };
    for (i, (s, d)) in suggestions.iter().zip(&decisions).enumerate() {
        audit.event(
            "review_decision",
            json!({"suggestion": i, "kind": s.kind, "action": s.action, "decision": d.name()}),
        );
    }
    fs::write(&out_path, corrected).map_err(|e| format!("{}: {e}", out_path.display()))?;
    let applied = decisions.iter().filter(|d| **d != Decision::Reject).count();
    audit.event("review_finished", json!({"suggestions": suggestions.len(), "applied": applied}));
    eprintln!("{applied} of {} suggestions applied; wrote {}", suggestions.len(), out_path.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{EntityKind, Span};

    fn replace(start: usize, end: usize, original: &str, replacement: &str) -> SuggestionView {
        SuggestionView {
            kind: EntityKind::Identifier,
            action: SuggestionAction::Replace,
            distance: Some(1),
            input_index: 0,
            output_index: Some(0),
            reason: String::new(),
            safe: true,
            span: Some(Span { start, end }),
            original: Some(original.into()),
            replacement: Some(replacement.into()),
        }
    }

    #[test]
    fn applies_in_char_offsets() {
        let text = "Gerät BF-1HTJO und BF-2";
        let s = [replace(6, 14, "BF-1HTJO", "BF-1HTJ0")];
        let out = apply_decisions(text, &s, &[Decision::Accept]).unwrap();
        assert_eq!(out, "Gerät BF-1HTJ0 und BF-2");
        assert_eq!(apply_decisions(text, &s, &[Decision::Reject]).unwrap(), text);
        let edited = apply_decisions(text, &s, &[Decision::Edit("X".into())]).unwrap();
        assert_eq!(edited, "Gerät X und BF-2");
    }

    #[test]
    fn span_mismatch_is_an_error() {
        let s = [replace(0, 8, "BF-1HTJO", "BF-1HTJ0")];
        assert!(apply_decisions("short", &s, &[Decision::Accept]).is_err());
        assert!(apply_decisions("BF-1HTJX rest", &s, &[Decision::Accept]).is_err());
    }

    #[test]
    fn default_out_keeps_extension() {
        assert_eq!(default_out(Path::new("/t/out.txt")), PathBuf::from("/t/out.reviewed.txt"));
        assert_eq!(default_out(Path::new("out")), PathBuf::from("out.reviewed"));
    }
}
