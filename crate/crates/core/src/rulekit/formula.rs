//! Set formulas over condition atoms and named condition sets.
//!
//! Grammar (precedence `!` > `&` > `|`, binary operators left-associative):
//!
//! ```text
//! or      := and ( '|' and )*
//! and     := unary ( '&' unary )*
//! unary   := '!' unary | primary
//! primary := '(' or ')' | 'subset' '(' or ',' or ')' | IDENT
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a core or higher-order condition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub String);

impl ConditionId {
    pub fn new(id: impl Into<String>) -> Self {
        ConditionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConditionId {
    fn from(s: &str) -> Self {
        ConditionId(s.to_string())
    }
}

/// The named sets of the condition universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NamedSet {
    #[serde(rename = "C")]
    Core,
    #[serde(rename = "C_all")]
    All,
    #[serde(rename = "C_sat")]
    Satisfied,
    #[serde(rename = "C_req")]
    Required,
    #[serde(rename = "C_eval")]
    Evaluated,
    #[serde(rename = "C_pos")]
    Positive,
    #[serde(rename = "C_neg")]
    Negative,
}

impl NamedSet {
    pub const ALL: [NamedSet; 7] = [
        NamedSet::Core,
        NamedSet::All,
        NamedSet::Satisfied,
        NamedSet::Required,
        NamedSet::Evaluated,
        NamedSet::Positive,
        NamedSet::Negative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedSet::Core => "C",
            NamedSet::All => "C_all",
            NamedSet::Satisfied => "C_sat",
            NamedSet::Required => "C_req",
            NamedSet::Evaluated => "C_eval",
            NamedSet::Positive => "C_pos",
            NamedSet::Negative => "C_neg",
        }
    }

    pub fn from_name(name: &str) -> Option<NamedSet> {
        NamedSet::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Expression tree over condition atoms and named sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SetFormula {
    Atom(ConditionId),
    Set(NamedSet),
    And(Box<SetFormula>, Box<SetFormula>),
    Or(Box<SetFormula>, Box<SetFormula>),
    Not(Box<SetFormula>),
    Subset(Box<SetFormula>, Box<SetFormula>),
}

impl SetFormula {
    pub fn atom(id: &str) -> Self {
        SetFormula::Atom(ConditionId::new(id))
    }

    pub fn and(a: SetFormula, b: SetFormula) -> Self {
        SetFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: SetFormula, b: SetFormula) -> Self {
        SetFormula::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: SetFormula) -> Self {
        SetFormula::Not(Box::new(a))
    }

    pub fn subset(a: SetFormula, b: SetFormula) -> Self {
        SetFormula::Subset(Box::new(a), Box::new(b))
    }

    /// Condition ids referenced by the formula.
    pub fn atoms(&self) -> BTreeSet<ConditionId> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<ConditionId>) {
        match self {
            SetFormula::Atom(id) => {
                out.insert(id.clone());
            }
            SetFormula::Set(_) => {}
            SetFormula::Not(a) => a.collect_atoms(out),
            SetFormula::And(a, b) | SetFormula::Or(a, b) | SetFormula::Subset(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            SetFormula::Atom(_) | SetFormula::Set(_) => 1,
            SetFormula::Not(a) => 1 + a.depth(),
            SetFormula::And(a, b) | SetFormula::Or(a, b) | SetFormula::Subset(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            SetFormula::Or(..) => 1,
            SetFormula::And(..) => 2,
            SetFormula::Not(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for SetFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Left operands need parentheses only when they bind looser; right
        // operands also when they bind equally, since parsing is left-assoc.
        fn side(
            f: &mut fmt::Formatter<'_>,
            child: &SetFormula,
            parent: u8,
            right: bool,
        ) -> fmt::Result {
            let p = child.precedence();
            if p < parent || (right && p == parent) {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        }
        match self {
            SetFormula::Atom(id) => f.write_str(id.as_str()),
            SetFormula::Set(s) => f.write_str(s.name()),
            SetFormula::And(a, b) => {
                side(f, a, 2, false)?;
                f.write_str(" & ")?;
                side(f, b, 2, true)
            }
            SetFormula::Or(a, b) => {
                side(f, a, 1, false)?;
                f.write_str(" | ")?;
                side(f, b, 1, true)
            }
            SetFormula::Not(a) => {
                f.write_str("!")?;
                side(f, a, 3, false)
            }
            SetFormula::Subset(a, b) => write!(f, "subset({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("subset at {position} takes exactly 2 arguments, found {found}")]
    Arity { position: usize, found: usize },
}

impl FormulaError {
    pub fn position(&self) -> usize {
        match self {
            FormulaError::Syntax { position, .. } | FormulaError::Arity { position, .. } => {
                *position
            }
        }
    }
}

impl FromStr for SetFormula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

/// Parses a formula string into its expression tree.
pub fn parse_formula(text: &str) -> Result<SetFormula, FormulaError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.chars().count(),
    };
    let f = p.parse_or()?;
    match p.peek() {
        None => Ok(f),
        Some((tok, at)) => Err(FormulaError::Syntax {
            position: at,
            message: format!("unexpected {}", tok.describe()),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    And,
    Or,
    Not,
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Not => "`!`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '&' => Tok::And,
            '|' => Tok::Or,
            '!' => Tok::Not,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            other => {
                return Err(FormulaError::Syntax {
                    position: i,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, i));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<(Tok, usize)> {
        self.tokens.get(self.pos).cloned()
    }

    fn at(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.1)
    }

    fn expect(&mut self, want: Tok) -> Result<(), FormulaError> {
        match self.peek() {
            Some((t, _)) if t == want => {
                self.pos += 1;
                Ok(())
            }
            Some((t, at)) => Err(FormulaError::Syntax {
                position: at,
                message: format!("expected {}, found {}", want.describe(), t.describe()),
            }),
            None => Err(FormulaError::Syntax {
                position: self.end,
                message: format!("expected {} at end of input", want.describe()),
            }),
        }
    }

    fn parse_or(&mut self) -> Result<SetFormula, FormulaError> {
        let mut lhs = self.parse_and()?;
        while matches!(self.peek(), Some((Tok::Or, _))) {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = SetFormula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<SetFormula, FormulaError> {
        let mut lhs = self.parse_unary()?;
        while matches!(self.peek(), Some((Tok::And, _))) {
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = SetFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<SetFormula, FormulaError> {
        if matches!(self.peek(), Some((Tok::Not, _))) {
            self.pos += 1;
            return Ok(SetFormula::not(self.parse_unary()?));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<SetFormula, FormulaError> {
        let at = self.at();
        match self.peek() {
            Some((Tok::LParen, _)) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some((Tok::Ident(name), _)) if name == "subset" => {
                self.pos += 1;
                self.expect(Tok::LParen)?;
                let mut args = vec![self.parse_or()?];
                while matches!(self.peek(), Some((Tok::Comma, _))) {
                    self.pos += 1;
                    args.push(self.parse_or()?);
                }
                self.expect(Tok::RParen)?;
                if args.len() != 2 {
                    return Err(FormulaError::Arity {
                        position: at,
                        found: args.len(),
                    });
                }
                let b = args.pop().expect("two args");
                let a = args.pop().expect("two args");
                Ok(SetFormula::subset(a, b))
            }
            Some((Tok::Ident(name), _)) => {
                self.pos += 1;
                Ok(match NamedSet::from_name(&name) {
                    Some(set) => SetFormula::Set(set),
                    None => SetFormula::Atom(ConditionId(name)),
                })
            }
            Some((t, at)) => Err(FormulaError::Syntax {
                position: at,
                message: format!("expected operand, found {}", t.describe()),
            }),
            None => Err(FormulaError::Syntax {
                position: self.end,
                message: "expected operand at end of input".into(),
            }),
        }
    }
}
