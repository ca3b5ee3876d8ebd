//! Tableaux-based input validation.
//!
//! Core conditions are evaluated programmatically against the input, then
//! higher-order conditions are solved over the set universe in prerequisite
//! order: conjunction (α) is intersection, disjunction (β) is union and
//! negation is complement over `C_all`. A formula holds iff its denotation is
//! nonempty. Trigger actions fire on the final satisfaction state and the
//! mandatory-consistency gate `(C_req ∩ C_eval) ⊆ C_pos` decides whether
//! generation may proceed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::rulekit::{
    prerequisite_order, ActionKind, ConditionId, Event, HigherOrderBody, NamedSet, Predicate,
    Ruleset, SetFormula,
};

/// Input document: field name to JSON value (text fields are strings).
pub type InputDocument = BTreeMap<String, Value>;

pub type IdSet = BTreeSet<ConditionId>;

pub fn load_input(path: impl AsRef<Path>) -> Result<InputDocument, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Text content of an input document: string fields in key order, one per line.
pub fn input_text(input: &InputDocument) -> String {
    input
        .values()
        .filter_map(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Snapshot of the named condition sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConditionUniverse {
    pub core: IdSet,
    pub all: IdSet,
    pub satisfied: IdSet,
    pub required: IdSet,
    pub evaluated: IdSet,
    pub positive: IdSet,
}

impl ConditionUniverse {
    /// `C_neg = C_all \ C_pos`.
    pub fn negative(&self) -> IdSet {
        self.all.difference(&self.positive).cloned().collect()
    }

    pub fn named(&self, set: NamedSet) -> IdSet {
        match set {
            NamedSet::Core => self.core.clone(),
            NamedSet::All => self.all.clone(),
            NamedSet::Satisfied => self.satisfied.clone(),
            NamedSet::Required => self.required.clone(),
            NamedSet::Evaluated => self.evaluated.clone(),
            NamedSet::Positive => self.positive.clone(),
            NamedSet::Negative => self.negative(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableauRule {
    /// Atom or named set.
    Leaf,
    Alpha,
    Beta,
    Complement,
    Subset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchRecord {
    pub fragment: String,
    pub rule: TableauRule,
    pub nonempty: bool,
    pub depth: usize,
    pub parent: Option<usize>,
}

/// Pre-order record of every decomposition step of one solve.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BranchTrace {
    pub records: Vec<BranchRecord>,
}

impl BranchTrace {
    pub fn children(&self, idx: usize) -> impl Iterator<Item = &BranchRecord> {
        self.records.iter().filter(move |r| r.parent == Some(idx))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub denotation: IdSet,
    pub trace: BranchTrace,
}

impl Solution {
    pub fn satisfied(&self) -> bool {
        !self.denotation.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("atom `{0}` does not resolve in the condition universe")]
    UnresolvedAtom(ConditionId),
}

/// Computes the denotation of `formula` over `universe`, recording a trace.
pub fn solve(formula: &SetFormula, universe: &ConditionUniverse) -> Result<Solution, SolveError> {
    let mut trace = BranchTrace::default();
    let negative = universe.negative();
    let denotation = solve_node(formula, universe, &negative, &mut trace, 0, None)?;
    Ok(Solution { denotation, trace })
}

fn solve_node(
    f: &SetFormula,
    u: &ConditionUniverse,
    negative: &IdSet,
    trace: &mut BranchTrace,
    depth: usize,
    parent: Option<usize>,
) -> Result<IdSet, SolveError> {
    let rule = match f {
        SetFormula::Atom(_) | SetFormula::Set(_) => TableauRule::Leaf,
        SetFormula::And(..) => TableauRule::Alpha,
        SetFormula::Or(..) => TableauRule::Beta,
        SetFormula::Not(_) => TableauRule::Complement,
        SetFormula::Subset(..) => TableauRule::Subset,
    };
    let idx = trace.records.len();
    trace.records.push(BranchRecord {
        fragment: f.to_string(),
        rule,
        nonempty: false,
        depth,
        parent,
    });
    let sub = |g: &SetFormula, trace: &mut BranchTrace| {
        solve_node(g, u, negative, trace, depth + 1, Some(idx))
    };
    let set = match f {
        SetFormula::Atom(id) => {
            if !u.all.contains(id) {
                return Err(SolveError::UnresolvedAtom(id.clone()));
            }
            if u.satisfied.contains(id) {
                u.all.clone()
            } else {
                IdSet::new()
            }
        }
        SetFormula::Set(NamedSet::Negative) => negative.clone(),
        SetFormula::Set(s) => u.named(*s),
        SetFormula::And(a, b) => {
            let l = sub(a, trace)?;
            let r = sub(b, trace)?;
            l.intersection(&r).cloned().collect()
        }
        SetFormula::Or(a, b) => {
            // Each disjunct is an independent branch; the union does not
            // depend on the order they are explored in.
            let l = sub(a, trace)?;
            let r = sub(b, trace)?;
            l.union(&r).cloned().collect()
        }
        SetFormula::Not(a) => {
            let inner = sub(a, trace)?;
            u.all.difference(&inner).cloned().collect()
        }
        SetFormula::Subset(a, b) => {
            let l = sub(a, trace)?;
            let r = sub(b, trace)?;
            if l.is_subset(&r) {
                u.all.clone()
            } else {
                IdSet::new()
            }
        }
    };
    trace.records[idx].nonempty = !set.is_empty();
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("condition `{condition}` cannot be evaluated: {message}")]
    Eval {
        condition: ConditionId,
        message: String,
    },
}

fn text_field<'a>(
    input: &'a InputDocument,
    field: &str,
    id: &ConditionId,
    predicate: &Predicate,
) -> Result<Option<&'a str>, ValidationError> {
    match input.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(ValidationError::Eval {
            condition: id.clone(),
            message: format!(
                "`{}` needs a text field but `{field}` is {}",
                predicate.name(),
                json_type(other)
            ),
        }),
    }
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Phase 1: ids of the core conditions whose predicate holds on `input`.
pub fn eval_core(rs: &Ruleset, input: &InputDocument) -> Result<IdSet, ValidationError> {
    let mut sat = IdSet::new();
    for c in &rs.core {
        let p = &c.predicate;
        let holds = match p {
            Predicate::FieldPresent { field } => {
                !matches!(input.get(field), None | Some(Value::Null))
            }
            Predicate::FieldMatches { field, pattern } => {
                text_field(input, field, &c.id, p)?.is_some_and(|s| pattern.is_match(s))
            }
            Predicate::MinLength { field, n } => {
                text_field(input, field, &c.id, p)?.is_some_and(|s| s.trim().chars().count() >= *n)
            }
            Predicate::Nonempty { field } => {
                text_field(input, field, &c.id, p)?.is_some_and(|s| !s.trim().is_empty())
            }
            Predicate::KeywordPresent { field, matcher, .. } => match field {
                Some(field) => {
                    text_field(input, field, &c.id, p)?.is_some_and(|s| matcher.is_match(s))
                }
                None => input
                    .values()
                    .filter_map(Value::as_str)
                    .any(|s| matcher.is_match(s)),
            },
        };
        if holds {
            sat.insert(c.id.clone());
        }
    }
    Ok(sat)
}

/// Positive set: evaluated conditions whose observed satisfaction equals
/// their expected polarity. Conditions not yet evaluated carry no observed
/// state and are not counted as mismatches.
pub fn build_positive_set(satisfied: &IdSet, evaluated: &IdSet, rs: &Ruleset) -> IdSet {
    let mut pos = IdSet::new();
    for c in &rs.core {
        if !evaluated.contains(&c.id) || satisfied.contains(&c.id) == c.expected {
            pos.insert(c.id.clone());
        }
    }
    for h in &rs.higher {
        if !evaluated.contains(&h.id) || satisfied.contains(&h.id) == h.expected {
            pos.insert(h.id.clone());
        }
    }
    pos
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Pass,
    PassWithWarnings,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSeverity {
    Info,
    Warning,
    Block,
}

impl From<ActionKind> for FeedbackSeverity {
    fn from(k: ActionKind) -> Self {
        match k {
            ActionKind::Info => FeedbackSeverity::Info,
            ActionKind::Warn => FeedbackSeverity::Warning,
            ActionKind::Block => FeedbackSeverity::Block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Action,
    Gate,
    Aggregate,
    Scheduler,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feedback {
    pub condition: ConditionId,
    pub severity: FeedbackSeverity,
    pub source: FeedbackSource,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationOutcome {
    pub status: ValidationStatus,
    pub gate_result: bool,
    pub satisfied: IdSet,
    pub evaluated: IdSet,
    pub negative: IdSet,
    pub unevaluated: Vec<ConditionId>,
    pub feedback: Vec<Feedback>,
    pub traces: BTreeMap<ConditionId, BranchTrace>,
}

impl ValidationOutcome {
    pub fn blocked(&self) -> bool {
        self.status == ValidationStatus::Blocked
    }
}

/// Runs the three validation phases over `input`.
pub fn run_validation(
    rs: &Ruleset,
    input: &InputDocument,
) -> Result<ValidationOutcome, ValidationError> {
    // Phase 1
    let mut satisfied = eval_core(rs, input)?;
    let core: IdSet = rs.core_ids().cloned().collect();
    let required: IdSet = rs
        .core
        .iter()
        .filter(|c| c.required)
        .map(|c| c.id.clone())
        .collect();
    let mut evaluated = core.clone();
    let all: IdSet = rs.all_ids().cloned().collect();
    let mut feedback = Vec::new();
    let mut traces = BTreeMap::new();

    // Phase 2: passes in topological order until no condition becomes
    // evaluable. Conditions caught in a prerequisite cycle trail the order
    // and never become evaluable.
    let order: Vec<usize> = match prerequisite_order(rs) {
        Ok(order) => order,
        Err(stuck) => {
            let mut order: Vec<usize> = (0..rs.higher.len())
                .filter(|&i| !stuck.contains(&rs.higher[i].id))
                .collect();
            order.extend((0..rs.higher.len()).filter(|&i| stuck.contains(&rs.higher[i].id)));
            order
        }
    };
    let prereqs: Vec<Vec<ConditionId>> =
        rs.higher.iter().map(|h| h.effective_prerequisites()).collect();
    loop {
        let mut progress = false;
        for &i in &order {
            let h = &rs.higher[i];
            if evaluated.contains(&h.id) || !prereqs[i].iter().all(|p| evaluated.contains(p)) {
                continue;
            }
            let universe = ConditionUniverse {
                core: core.clone(),
                all: all.clone(),
                positive: build_positive_set(&satisfied, &evaluated, rs),
                satisfied: satisfied.clone(),
                required: required.clone(),
                evaluated: evaluated.clone(),
            };
            let solution = solve(h.formula(), &universe).map_err(|e| ValidationError::Eval {
                condition: h.id.clone(),
                message: e.to_string(),
            })?;
            let holds = match &h.body {
                HigherOrderBody::Meta { .. } => solution.satisfied(),
                HigherOrderBody::Aggregate(spec) => {
                    let count = solution.denotation.len() as u64;
                    let holds = spec.comparator.holds(count, spec.tau);
                    if holds != h.expected {
                        feedback.push(Feedback {
                            condition: h.id.clone(),
                            severity: FeedbackSeverity::Warning,
                            source: FeedbackSource::Aggregate,
                            message: format!(
                                "count of `{}` is {count}, bound {} {} {}",
                                spec.over,
                                if holds { "holds" } else { "violated:" },
                                spec.comparator.symbol(),
                                spec.tau
                            ),
                        });
                    }
                    holds
                }
            };
            if holds {
                satisfied.insert(h.id.clone());
            }
            evaluated.insert(h.id.clone());
            traces.insert(h.id.clone(), solution.trace);
            progress = true;
        }
        if !progress {
            break;
        }
    }
    let unevaluated: Vec<ConditionId> = rs
        .higher
        .iter()
        .filter(|h| !evaluated.contains(&h.id))
        .map(|h| h.id.clone())
        .collect();
    for id in &unevaluated {
        feedback.push(Feedback {
            condition: id.clone(),
            severity: FeedbackSeverity::Info,
            source: FeedbackSource::Scheduler,
            message: format!("`{id}` not evaluated: prerequisites never met"),
        });
    }
    let positive = build_positive_set(&satisfied, &evaluated, rs);

    // Phase 3
    let mut action_blocked = false;
    for action in &rs.actions {
        if !evaluated.contains(&action.trigger) {
            feedback.push(Feedback {
                condition: action.trigger.clone(),
                severity: FeedbackSeverity::Info,
                source: FeedbackSource::Scheduler,
                message: format!(
                    "action on `{}` skipped: trigger was not evaluated",
                    action.trigger
                ),
            });
            continue;
        }
        if satisfied.contains(&action.trigger) == (action.event == Event::Sat) {
            action_blocked |= action.kind == ActionKind::Block;
            feedback.push(Feedback {
                condition: action.trigger.clone(),
                severity: action.kind.into(),
                source: FeedbackSource::Action,
                message: action.render_message(),
            });
        }
    }

    let misaligned: Vec<&ConditionId> = required
        .intersection(&evaluated)
        .filter(|id| !positive.contains(*id))
        .collect();
    let gate_result = misaligned.is_empty();
    for id in misaligned {
        let expected = rs.expected(id).unwrap_or(true);
        feedback.push(Feedback {
            condition: id.clone(),
            severity: FeedbackSeverity::Block,
            source: FeedbackSource::Gate,
            message: format!(
                "required condition `{id}` is {} but expected {}",
                if satisfied.contains(id) { "satisfied" } else { "not satisfied" },
                if expected { "satisfied" } else { "unsatisfied" }
            ),
        });
    }

    let status = if action_blocked || !gate_result {
        ValidationStatus::Blocked
    } else if feedback
        .iter()
        .any(|f| f.severity == FeedbackSeverity::Warning)
    {
        ValidationStatus::PassWithWarnings
    } else {
        ValidationStatus::Pass
    };
    let negative = all.difference(&positive).cloned().collect();
    Ok(ValidationOutcome {
        status,
        gate_result,
        satisfied,
        evaluated,
        negative,
        unevaluated,
        feedback,
        traces,
    })
}
