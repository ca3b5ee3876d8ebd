//! Declarative rulesets: core conditions with programmatic predicates,
//! higher-order meta and aggregate conditions, and trigger actions.
//!
//! Rulesets are loaded from a versioned JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "profile": "damage_narrative",
//!   "core_conditions": [
//!     {"id": "c_serial", "predicate": "field_present",
//!      "args": {"field": "serial_number"}, "required": false, "expected": true}
//!   ],
//!   "meta_conditions": [
//!     {"id": "c_ready", "formula": "(c_dev_type & c_serial) | c_party", "expected": true}
//!   ],
//!   "aggregate_conditions": [
//!     {"id": "c_mismatch", "statistic": "count", "over": "C_neg",
//!      "comparator": "<=", "tau": 2}
//!   ],
//!   "actions": [
//!     {"trigger": "c_ready", "event": "unsat", "kind": "block",
//!      "message": "{id}: insufficient grounding"}
//!   ]
//! }
//! ```

mod formula;
mod lint;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use formula::{parse_formula, ConditionId, FormulaError, NamedSet, SetFormula};
pub use lint::{lint_ruleset, prerequisite_order, Diagnostic, DiagnosticKind, Severity};

pub const SCHEMA_VERSION: u64 = 1;

/// Programmatic predicate of a core condition.
#[derive(Debug, Clone)]
pub enum Predicate {
    /// Field exists and is not `null`.
    FieldPresent { field: String },
    /// Text field matches a regular expression.
    FieldMatches { field: String, pattern: Regex },
    /// Any of the words occurs (case-insensitive, whole word) in the given
    /// text field, or in any text field when `field` is `None`.
    KeywordPresent {
        field: Option<String>,
        words: Vec<String>,
        matcher: Regex,
    },
    /// Text field has at least `n` characters after trimming.
    MinLength { field: String, n: usize },
    /// Text field contains a non-whitespace character.
    Nonempty { field: String },
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::FieldPresent { .. } => "field_present",
            Predicate::FieldMatches { .. } => "field_matches",
            Predicate::KeywordPresent { .. } => "keyword_present",
            Predicate::MinLength { .. } => "min_length",
            Predicate::Nonempty { .. } => "nonempty",
        }
    }

    pub fn keyword(field: Option<String>, words: Vec<String>) -> Result<Self, regex::Error> {
        let alternation: Vec<String> = words.iter().map(|w| regex::escape(w)).collect();
        let matcher = Regex::new(&format!(r"(?i)\b(?:{})\b", alternation.join("|")))?;
        Ok(Predicate::KeywordPresent {
            field,
            words,
            matcher,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CoreCondition {
    pub id: ConditionId,
    pub predicate: Predicate,
    pub required: bool,
    /// Expected satisfaction polarity.
    pub expected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "=")]
    Equal,
}

impl Comparator {
    pub fn holds(self, value: u64, tau: u64) -> bool {
        match self {
            Comparator::AtMost => value <= tau,
            Comparator::AtLeast => value >= tau,
            Comparator::Equal => value == tau,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::AtMost => "<=",
            Comparator::AtLeast => ">=",
            Comparator::Equal => "=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSpec {
    pub statistic: Statistic,
    pub over: SetFormula,
    pub comparator: Comparator,
    pub tau: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HigherOrderBody {
    Meta { formula: SetFormula },
    Aggregate(AggregateSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HigherOrderCondition {
    pub id: ConditionId,
    pub body: HigherOrderBody,
    /// Prerequisites as declared; see [`Self::effective_prerequisites`].
    pub prerequisites: Vec<ConditionId>,
    pub expected: bool,
}

impl HigherOrderCondition {
    pub fn kind_name(&self) -> &'static str {
        match self.body {
            HigherOrderBody::Meta { .. } => "meta",
            HigherOrderBody::Aggregate(_) => "aggregate",
        }
    }

    pub(crate) fn formula_field(&self) -> &'static str {
        match self.body {
            HigherOrderBody::Meta { .. } => "formula",
            HigherOrderBody::Aggregate(_) => "over",
        }
    }

    pub fn formula(&self) -> &SetFormula {
        match &self.body {
            HigherOrderBody::Meta { formula } => formula,
            HigherOrderBody::Aggregate(spec) => &spec.over,
        }
    }

    pub fn formula_atoms(&self) -> BTreeSet<ConditionId> {
        self.formula().atoms()
    }

    /// Declared prerequisites, or the formula's condition atoms when none
    /// were declared.
    pub fn effective_prerequisites(&self) -> Vec<ConditionId> {
        if self.prerequisites.is_empty() {
            self.formula_atoms().into_iter().collect()
        } else {
            self.prerequisites.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Sat,
    Unsat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Info,
    Warn,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerAction {
    pub trigger: ConditionId,
    pub event: Event,
    pub kind: ActionKind,
    /// Feedback text; `{id}` is replaced with the trigger id.
    #[serde(default)]
    pub message: String,
}

impl TriggerAction {
    pub fn render_message(&self) -> String {
        if self.message.is_empty() {
            let state = match self.event {
                Event::Sat => "satisfied",
                Event::Unsat => "not satisfied",
            };
            format!("condition {} {state}", self.trigger)
        } else {
            self.message.replace("{id}", self.trigger.as_str())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ruleset {
    pub profile: String,
    pub core: Vec<CoreCondition>,
    pub higher: Vec<HigherOrderCondition>,
    pub actions: Vec<TriggerAction>,
}

impl Ruleset {
    pub fn core_ids(&self) -> impl Iterator<Item = &ConditionId> {
        self.core.iter().map(|c| &c.id)
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &ConditionId> {
        self.core_ids().chain(self.higher.iter().map(|h| &h.id))
    }

    /// Expected polarity of a declared condition.
    pub fn expected(&self, id: &ConditionId) -> Option<bool> {
        self.core
            .iter()
            .find(|c| &c.id == id)
            .map(|c| c.expected)
            .or_else(|| self.higher.iter().find(|h| &h.id == id).map(|h| h.expected))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ruleset, RuleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        parse_ruleset(&text)
    }
}

#[derive(Debug, Clone, Error)]
pub enum RuleError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("schema violation at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u64),
    #[error("unknown predicate `{name}` at {location}")]
    UnknownPredicate { location: String, name: String },
    #[error("invalid predicate arguments at {location}: {message}")]
    BadArguments { location: String, message: String },
    #[error("pattern `{pattern}` at {location} does not compile: {message}")]
    InvalidPattern {
        location: String,
        pattern: String,
        message: String,
    },
    #[error("invalid condition id `{id}` at {location}")]
    InvalidId { location: String, id: String },
    #[error("formula at {location}: {source}")]
    Formula {
        location: String,
        #[source]
        source: FormulaError,
    },
    #[error("{0}")]
    Invalid(Diagnostic),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleset {
    schema_version: u64,
    profile: String,
    core_conditions: Vec<RawCore>,
    #[serde(default)]
    meta_conditions: Vec<RawMeta>,
    #[serde(default)]
    aggregate_conditions: Vec<RawAggregate>,
    #[serde(default)]
    actions: Vec<TriggerAction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCore {
    id: String,
    predicate: String,
    #[serde(default)]
    args: Map<String, Value>,
    #[serde(default)]
    required: bool,
    #[serde(default = "yes")]
    expected: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    id: String,
    formula: String,
    #[serde(default)]
    prerequisites: Vec<ConditionId>,
    #[serde(default = "yes")]
    expected: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAggregate {
    id: String,
    statistic: Statistic,
    over: String,
    comparator: Comparator,
    tau: u64,
    #[serde(default)]
    prerequisites: Vec<ConditionId>,
    #[serde(default = "yes")]
    expected: bool,
}

fn yes() -> bool {
    true
}

pub(crate) fn is_reserved(id: &str) -> bool {
    id == "subset" || NamedSet::from_name(id).is_some()
}

fn check_id(id: &str, location: String) -> Result<ConditionId, RuleError> {
    let mut chars = id.chars();
    let valid = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if valid {
        Ok(ConditionId::new(id))
    } else {
        Err(RuleError::InvalidId {
            location,
            id: id.to_string(),
        })
    }
}

fn arg_str(args: &Map<String, Value>, key: &str, loc: &str) -> Result<String, RuleError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(RuleError::BadArguments {
            location: format!("{loc}.args.{key}"),
            message: "expected a string".into(),
        }),
        None => Err(RuleError::BadArguments {
            location: format!("{loc}.args"),
            message: format!("missing `{key}`"),
        }),
    }
}

fn parse_predicate(raw: &RawCore, loc: &str) -> Result<Predicate, RuleError> {
    let args = &raw.args;
    let allow = |keys: &[&str]| -> Result<(), RuleError> {
        match args.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(RuleError::BadArguments {
                location: format!("{loc}.args.{k}"),
                message: format!("unexpected argument for `{}`", raw.predicate),
            }),
            None => Ok(()),
        }
    };
    match raw.predicate.as_str() {
        "field_present" => {
            allow(&["field"])?;
            Ok(Predicate::FieldPresent {
                field: arg_str(args, "field", loc)?,
            })
        }
        "nonempty" => {
            allow(&["field"])?;
            Ok(Predicate::Nonempty {
                field: arg_str(args, "field", loc)?,
            })
        }
        "field_matches" => {
            allow(&["field", "pattern"])?;
            let field = arg_str(args, "field", loc)?;
            let pattern = arg_str(args, "pattern", loc)?;
            let compiled = Regex::new(&pattern).map_err(|e| RuleError::InvalidPattern {
                location: format!("{loc}.args.pattern"),
                pattern: pattern.clone(),
                message: e.to_string(),
            })?;
            Ok(Predicate::FieldMatches {
                field,
                pattern: compiled,
            })
        }
        "min_length" => {
            allow(&["field", "n"])?;
            let field = arg_str(args, "field", loc)?;
            let n = args
                .get("n")
                .and_then(Value::as_u64)
                .ok_or_else(|| RuleError::BadArguments {
                    location: format!("{loc}.args.n"),
                    message: "expected a nonnegative integer".into(),
                })?;
            Ok(Predicate::MinLength {
                field,
                n: n as usize,
            })
        }
        "keyword_present" => {
            allow(&["field", "words"])?;
            let field = match args.get("field") {
                None => None,
                Some(_) => Some(arg_str(args, "field", loc)?),
            };
            let words: Vec<String> = match args.get("words") {
                Some(Value::Array(items)) if !items.is_empty() => items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string))
                    .collect::<Option<_>>()
                    .ok_or_else(|| RuleError::BadArguments {
                        location: format!("{loc}.args.words"),
                        message: "expected a list of strings".into(),
                    })?,
                _ => {
                    return Err(RuleError::BadArguments {
                        location: format!("{loc}.args.words"),
                        message: "expected a nonempty list of strings".into(),
                    })
                }
            };
            Predicate::keyword(field, words).map_err(|e| RuleError::InvalidPattern {
                location: format!("{loc}.args.words"),
                pattern: String::new(),
                message: e.to_string(),
            })
        }
        other => Err(RuleError::UnknownPredicate {
            location: format!("{loc}.predicate"),
            name: other.to_string(),
        }),
    }
}

fn parse_located_formula(text: &str, location: String) -> Result<SetFormula, RuleError> {
    parse_formula(text).map_err(|source| RuleError::Formula { location, source })
}

/// Parses and checks a ruleset document.
pub fn parse_ruleset(document: &str) -> Result<Ruleset, RuleError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let raw: RawRuleset = serde_path_to_error::deserialize(de).map_err(|e| RuleError::Schema {
        location: match e.path().to_string() {
            p if p == "." => format!(
                "line {} column {}",
                e.inner().line(),
                e.inner().column()
            ),
            p => p,
        },
        message: e.inner().to_string(),
    })?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(RuleError::UnsupportedVersion(raw.schema_version));
    }

    let mut core = Vec::with_capacity(raw.core_conditions.len());
    for (i, c) in raw.core_conditions.iter().enumerate() {
        let loc = format!("core_conditions[{i}]");
        core.push(CoreCondition {
            id: check_id(&c.id, format!("{loc}.id"))?,
            predicate: parse_predicate(c, &loc)?,
            required: c.required,
            expected: c.expected,
        });
    }

    let mut higher = Vec::new();
    for (i, m) in raw.meta_conditions.into_iter().enumerate() {
        let loc = format!("meta_conditions[{i}]");
        higher.push(HigherOrderCondition {
            id: check_id(&m.id, format!("{loc}.id"))?,
            body: HigherOrderBody::Meta {
                formula: parse_located_formula(&m.formula, format!("{loc}.formula"))?,
            },
            prerequisites: m.prerequisites,
            expected: m.expected,
        });
    }
    for (i, a) in raw.aggregate_conditions.into_iter().enumerate() {
        let loc = format!("aggregate_conditions[{i}]");
        higher.push(HigherOrderCondition {
            id: check_id(&a.id, format!("{loc}.id"))?,
            body: HigherOrderBody::Aggregate(AggregateSpec {
                statistic: a.statistic,
                over: parse_located_formula(&a.over, format!("{loc}.over"))?,
                comparator: a.comparator,
                tau: a.tau,
            }),
            prerequisites: a.prerequisites,
            expected: a.expected,
        });
    }

    let rs = Ruleset {
        profile: raw.profile,
        core,
        higher,
        actions: raw.actions,
    };
    if let Some(err) = lint_ruleset(&rs)
        .into_iter()
        .find(|d| d.severity == Severity::Error)
    {
        return Err(RuleError::Invalid(err));
    }
    Ok(rs)
}

impl fmt::Display for Ruleset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ruleset `{}`: {} core, {} higher-order, {} actions",
            self.profile,
            self.core.len(),
            self.higher.len(),
            self.actions.len()
        )
    }
}
