//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritab::rulekit::{ConditionId, NamedSet, SetFormula};
use veritab::tableaux::{ConditionUniverse, IdSet};

pub const NAMED: [NamedSet; 7] = [
    NamedSet::Core,
    NamedSet::All,
    NamedSet::Satisfied,
    NamedSet::Required,
    NamedSet::Evaluated,
    NamedSet::Positive,
    NamedSet::Negative,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ids(names: &[String]) -> IdSet {
    names.iter().map(|s| ConditionId::new(s.as_str())).collect()
}

fn subset(rng: &mut ChaCha8Rng, of: &[String]) -> IdSet {
    let picked: Vec<String> = of.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
    ids(&picked)
}

/// Universe over `n` conditions with independent random named sets.
pub fn random_universe(rng: &mut ChaCha8Rng, n: usize) -> (Vec<String>, ConditionUniverse) {
    let names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let core_n = rng.random_range(0..=n);
    let u = ConditionUniverse {
        core: ids(&names[..core_n]),
        all: ids(&names),
        satisfied: subset(rng, &names),
        required: subset(rng, &names[..core_n]),
        evaluated: subset(rng, &names),
        positive: subset(rng, &names),
    };
    (names, u)
}

/// Random formula of depth at most `depth` over `atoms` and, when
/// `with_sets`, the named sets.
pub fn random_formula(rng: &mut ChaCha8Rng, atoms: &[String], depth: usize, with_sets: bool) -> SetFormula {
    let leaf = depth == 0 || rng.random_bool(0.25);
    if leaf {
        if with_sets && rng.random_bool(0.2) {
            return SetFormula::Set(NAMED[rng.random_range(0..NAMED.len())]);
        }
        return SetFormula::atom(&atoms[rng.random_range(0..atoms.len())]);
    }
    let d = depth - 1;
    match rng.random_range(0..if with_sets { 4 } else { 3 }) {
        0 => SetFormula::and(random_formula(rng, atoms, d, with_sets), random_formula(rng, atoms, d, with_sets)),
        1 => SetFormula::or(random_formula(rng, atoms, d, with_sets), random_formula(rng, atoms, d, with_sets)),
        2 => SetFormula::not(random_formula(rng, atoms, d, with_sets)),
        _ => SetFormula::subset(random_formula(rng, atoms, d, with_sets), random_formula(rng, atoms, d, with_sets)),
    }
}

fn named(u: &ConditionUniverse, s: NamedSet) -> &IdSet {
    match s {
        NamedSet::Core => &u.core,
        NamedSet::All => &u.all,
        NamedSet::Satisfied => &u.satisfied,
        NamedSet::Required => &u.required,
        NamedSet::Evaluated => &u.evaluated,
        NamedSet::Positive => &u.positive,
        NamedSet::Negative => unreachable!("handled by the caller"),
    }
}

/// Membership of one element `x` in the denotation, decided pointwise:
/// atoms are constant predicates, connectives act on truth values, and
/// `subset` quantifies over the whole universe.
pub fn member(f: &SetFormula, u: &ConditionUniverse, x: &ConditionId) -> bool {
    match f {
        SetFormula::Atom(id) => u.satisfied.contains(id),
        SetFormula::Set(NamedSet::Negative) => !u.positive.contains(x),
        SetFormula::Set(s) => named(u, *s).contains(x),
        SetFormula::And(a, b) => member(a, u, x) && member(b, u, x),
        SetFormula::Or(a, b) => member(a, u, x) || member(b, u, x),
        SetFormula::Not(a) => !member(a, u, x),
        SetFormula::Subset(a, b) => u.all.iter().all(|y| !member(a, u, y) || member(b, u, y)),
    }
}

pub fn oracle_denotation(f: &SetFormula, u: &ConditionUniverse) -> IdSet {
    u.all.iter().filter(|x| member(f, u, x)).cloned().collect()
}

/// Classical truth of an atom-only formula under the assignment
/// "atom is true iff satisfied".
pub fn truth(f: &SetFormula, sat: &BTreeSet<ConditionId>) -> bool {
    match f {
        SetFormula::Atom(id) => sat.contains(id),
        SetFormula::And(a, b) => truth(a, sat) && truth(b, sat),
        SetFormula::Or(a, b) => truth(a, sat) || truth(b, sat),
        SetFormula::Not(a) => !truth(a, sat),
        SetFormula::Subset(a, b) => !truth(a, sat) || truth(b, sat),
        SetFormula::Set(_) => panic!("truth() takes atom-only formulas"),
    }
}

/// Minimal HTTP/1.1 stand-in for the embedding service. Every connection
/// serves one request and closes.
pub mod mock_service {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    use serde_json::Value;

    /// `(status, body)` for a request path and parsed JSON body.
    pub type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

    pub struct MockService {
        pub url: String,
        pub embed_calls: Arc<AtomicUsize>,
    }

    pub fn start(handler: impl Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static) -> MockService {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = calls.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                let counter = counter.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut len = 0;
                    loop {
                        let mut h = String::new();
                        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                            break;
                        }
                        if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                    let mut body = vec![0; len];
                    let _ = reader.read_exact(&mut body);
                    let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                    if path == "/embed" {
                        counter.fetch_add(1, Ordering::SeqCst);
                    }
                    let (status, out) = handler(&path, &json);
                    let text = out.to_string();
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                        text.len()
                    );
                });
            }
        });
        MockService { url, embed_calls: calls }
    }

    /// Deterministic toy vectors: `[chars, words, 1]`, unnormalized.
    pub fn toy_vector(text: &str) -> Vec<f32> {
        vec![text.chars().count() as f32, text.split_whitespace().count() as f32, 1.0]
    }

    /// A well-behaved service with model `mock-3` and dimension 3.
    pub fn healthy() -> MockService {
        start(|path, body| match path {
            "/health" => (200, serde_json::json!({"model_id": "mock-3", "dimension": 3})),
            "/embed" => {
                let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap_or_default();
                let vectors: Vec<Vec<f32>> = texts.iter().map(|t| toy_vector(t)).collect();
                (200, serde_json::json!({"model_id": "mock-3", "dimension": 3, "vectors": vectors}))
            }
            _ => (404, serde_json::json!({"error": "not found"})),
        })
    }
}
