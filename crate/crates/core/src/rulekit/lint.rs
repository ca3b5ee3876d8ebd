//! Structural checks over a [`Ruleset`].
//!
//! The same pass backs [`parse_ruleset`](super::parse_ruleset): any
//! diagnostic of error severity makes parsing fail.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{ConditionId, HigherOrderCondition, Ruleset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum DiagnosticKind {
    DuplicateId { id: ConditionId },
    ReservedId { id: ConditionId },
    UndefinedReference { id: ConditionId },
    PrerequisiteCycle { ids: Vec<ConditionId> },
    UnreferencedCondition { id: ConditionId },
    ImplicitPrerequisites { id: ConditionId, inferred: Vec<ConditionId> },
    NoPrerequisiteCoverage { id: ConditionId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Path into the ruleset document, e.g. `meta_conditions[2].formula`.
    pub location: String,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.location)?;
        match &self.kind {
            DiagnosticKind::DuplicateId { id } => write!(f, "duplicate condition id `{id}`"),
            DiagnosticKind::ReservedId { id } => {
                write!(f, "condition id `{id}` is reserved for a named set or keyword")
            }
            DiagnosticKind::UndefinedReference { id } => {
                write!(f, "reference to undefined condition `{id}`")
            }
            DiagnosticKind::PrerequisiteCycle { ids } => {
                let names: Vec<&str> = ids.iter().map(|i| i.as_str()).collect();
                write!(f, "prerequisite cycle through {}", names.join(" -> "))
            }
            DiagnosticKind::UnreferencedCondition { id } => write!(
                f,
                "condition `{id}` is not referenced by any formula, prerequisite or action"
            ),
            DiagnosticKind::ImplicitPrerequisites { id, inferred } => {
                let names: Vec<&str> = inferred.iter().map(|i| i.as_str()).collect();
                write!(
                    f,
                    "implicit prerequisites inferred for `{id}`: [{}]",
                    names.join(", ")
                )
            }
            DiagnosticKind::NoPrerequisiteCoverage { id } => write!(
                f,
                "higher-order condition `{id}` has no prerequisites and no condition atoms"
            ),
        }
    }
}

fn diag(severity: Severity, location: String, kind: DiagnosticKind) -> Diagnostic {
    Diagnostic {
        severity,
        location,
        kind,
    }
}

fn higher_location(rs: &Ruleset, idx: usize) -> String {
    let h = &rs.higher[idx];
    let ordinal = rs.higher[..idx]
        .iter()
        .filter(|o| o.kind_name() == h.kind_name())
        .count();
    format!("{}_conditions[{ordinal}]", h.kind_name())
}

/// Lints a ruleset. Diagnostics are ordered errors first, then by location.
pub fn lint_ruleset(rs: &Ruleset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut declared: BTreeSet<&ConditionId> = BTreeSet::new();

    let ids = rs
        .core
        .iter()
        .enumerate()
        .map(|(i, c)| (&c.id, format!("core_conditions[{i}].id")))
        .chain(
            rs.higher
                .iter()
                .enumerate()
                .map(|(i, h)| (&h.id, format!("{}.id", higher_location(rs, i)))),
        );
    for (id, loc) in ids {
        if !declared.insert(id) {
            out.push(diag(
                Severity::Error,
                loc.clone(),
                DiagnosticKind::DuplicateId { id: id.clone() },
            ));
        }
        if super::is_reserved(id.as_str()) {
            out.push(diag(
                Severity::Error,
                loc,
                DiagnosticKind::ReservedId { id: id.clone() },
            ));
        }
    }

    let mut referenced: BTreeSet<&ConditionId> = BTreeSet::new();
    for (i, h) in rs.higher.iter().enumerate() {
        let loc = higher_location(rs, i);
        for atom in h.formula_atoms() {
            if !declared.contains(&atom) {
                out.push(diag(
                    Severity::Error,
                    format!("{loc}.{}", h.formula_field()),
                    DiagnosticKind::UndefinedReference { id: atom.clone() },
                ));
            }
        }
        for p in &h.prerequisites {
            referenced.insert(p);
            if !declared.contains(p) {
                out.push(diag(
                    Severity::Error,
                    format!("{loc}.prerequisites"),
                    DiagnosticKind::UndefinedReference { id: p.clone() },
                ));
            }
        }
        if h.prerequisites.is_empty() {
            let inferred: Vec<ConditionId> = h.formula_atoms().into_iter().collect();
            if inferred.is_empty() {
                out.push(diag(
                    Severity::Info,
                    loc.clone(),
                    DiagnosticKind::NoPrerequisiteCoverage { id: h.id.clone() },
                ));
            } else {
                out.push(diag(
                    Severity::Info,
                    format!("{loc}.prerequisites"),
                    DiagnosticKind::ImplicitPrerequisites {
                        id: h.id.clone(),
                        inferred,
                    },
                ));
            }
        }
    }
    let atoms: Vec<ConditionId> = rs.higher.iter().flat_map(|h| h.formula_atoms()).collect();
    referenced.extend(atoms.iter());

    for (i, a) in rs.actions.iter().enumerate() {
        referenced.insert(&a.trigger);
        if !declared.contains(&a.trigger) {
            out.push(diag(
                Severity::Error,
                format!("actions[{i}].trigger"),
                DiagnosticKind::UndefinedReference {
                    id: a.trigger.clone(),
                },
            ));
        }
    }

    if let Err(cycle) = prerequisite_order(rs) {
        out.push(diag(
            Severity::Error,
            "prerequisites".to_string(),
            DiagnosticKind::PrerequisiteCycle { ids: cycle },
        ));
    }

    for (i, c) in rs.core.iter().enumerate() {
        if !referenced.contains(&c.id) {
            out.push(diag(
                Severity::Warning,
                format!("core_conditions[{i}]"),
                DiagnosticKind::UnreferencedCondition { id: c.id.clone() },
            ));
        }
    }
    for (i, h) in rs.higher.iter().enumerate() {
        if !referenced.contains(&h.id) {
            out.push(diag(
                Severity::Warning,
                higher_location(rs, i),
                DiagnosticKind::UnreferencedCondition { id: h.id.clone() },
            ));
        }
    }

    out.sort_by(|a, b| b.severity.cmp(&a.severity));
    out
}

/// Topological order of the higher-order conditions by their effective
/// prerequisites (declaration order breaks ties). On a cycle, returns the ids
/// that could not be ordered.
pub fn prerequisite_order(rs: &Ruleset) -> Result<Vec<usize>, Vec<ConditionId>> {
    let index: BTreeMap<&ConditionId, usize> =
        rs.higher.iter().enumerate().map(|(i, h)| (&h.id, i)).collect();
    let deps: Vec<Vec<usize>> = rs
        .higher
        .iter()
        .map(|h: &HigherOrderCondition| {
            h.effective_prerequisites()
                .iter()
                .filter_map(|p| index.get(p).copied())
                .collect()
        })
        .collect();
    let n = rs.higher.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let next = (0..n).find(|&i| !placed[i] && deps[i].iter().all(|&d| placed[d] && d != i));
        match next {
            Some(i) => {
                placed[i] = true;
                order.push(i);
            }
            None => break,
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n)
            .filter(|&i| !placed[i])
            .map(|i| rs.higher[i].id.clone())
            .collect())
    }
}
