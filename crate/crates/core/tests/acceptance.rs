//! Acceptance gate: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so every line reaches the terminal.
//! Exits nonzero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use common::{oracle_denotation, random_formula, random_universe, rng};
use veritab::coverage::{weighted_score, CoverageWeights, KindCount, MatchRecord, Verdict};
use veritab::embed::{EmbeddingProvider, FallbackEmbedder};
use veritab::extract::{EntityKind, Extractor};
use veritab::pipeline::{run_verification, FaultInjector, FaultMode, RunContext, VerificationJob, VerificationReport};
use veritab::retrieve::{index_corpus, narrow, retrieve, QuerySchema, SectionType, SourceDoc};
use veritab::rulekit::{parse_ruleset, Ruleset};
use veritab::simmetrics::{classify, euclidean_similarity, manhattan_similarity, Grade, GradeRuleset, SimilarityVector};
use veritab::tableaux::{run_validation, solve, FeedbackSeverity, InputDocument, TableauRule, ValidationStatus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn doc(v: Value) -> InputDocument {
    serde_json::from_value(v).expect("object")
}

fn empty_ruleset() -> Ruleset {
    parse_ruleset(r#"{"schema_version": 1, "profile": "acceptance", "core_conditions": []}"#).unwrap()
}

// ---------------------------------------------------------------- tableaux

fn tableaux_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(0x7ab1_ea0c);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=6);
        let (names, u) = random_universe(&mut r, n);
        let depth = r.random_range(0..=4);
        let f = random_formula(&mut r, &names, depth, true);
        if solve(&f, &u).unwrap().denotation != oracle_denotation(&f, &u) {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("1000 formulas, {mismatches} mismatches, {:.0} ms", elapsed.as_secs_f64() * 1e3),
    )
}

/// Ten required conditions of mixed predicates; each input breaks exactly one.
fn gate_completeness() -> Outcome {
    let fields = [
        ("c_report_id", "report_id", json!({"predicate": "field_matches", "args": {"field": "report_id", "pattern": "^R-\\d{3}$"}}), "R-123", "R123"),
        ("c_device", "device_type", json!({"predicate": "nonempty", "args": {"field": "device_type"}}), "infusion pump", "   "),
        ("c_serial", "serial_number", json!({"predicate": "field_present", "args": {"field": "serial_number"}}), "SN-4471", ""),
        ("c_category", "damage_category", json!({"predicate": "nonempty", "args": {"field": "damage_category"}}), "water ingress", ""),
        ("c_desc", "damage_description", json!({"predicate": "min_length", "args": {"field": "damage_description", "n": 20}}), "Liquid entered the housing during cleaning.", "Wet."),
        ("c_party", "responsible_party", json!({"predicate": "nonempty", "args": {"field": "responsible_party"}}), "Clinic Nord", ""),
        ("c_date", "incident_date", json!({"predicate": "field_matches", "args": {"field": "incident_date", "pattern": "^\\d{4}-\\d{2}-\\d{2}$"}}), "2024-11-03", "yesterday"),
        ("c_site", "site", json!({"predicate": "nonempty", "args": {"field": "site"}}), "Ward 4", ""),
        ("c_reporter", "reporter", json!({"predicate": "min_length", "args": {"field": "reporter", "n": 3}}), "J. Weber", "JW"),
        ("c_model", "model", json!({"predicate": "field_matches", "args": {"field": "model", "pattern": "^[A-Z]{2}\\d{2,}$"}}), "IP2000", "pump"),
    ];
    let conds: Vec<Value> = fields
        .iter()
        .map(|(id, _, spec, _, _)| {
            let mut c = spec.clone();
            c["id"] = json!(id);
            c["required"] = json!(true);
            c
        })
        .collect();
    let rs = parse_ruleset(&json!({"schema_version": 1, "profile": "gate", "core_conditions": conds}).to_string()).unwrap();

    let mut r = rng(0x9a7e);
    let mut hits = 0;
    for case in 0..100 {
        let k = case % fields.len();
        let mut m = serde_json::Map::new();
        for (i, (_, field, _, good, bad)) in fields.iter().enumerate() {
            if i != k {
                m.insert(field.to_string(), json!(good));
            } else if fields[i].0 == "c_serial" || r.random_bool(0.5) {
                // Drop the field; `field_present` accepts any non-null value.
            } else {
                m.insert(field.to_string(), json!(bad));
            }
        }
        let out = run_validation(&rs, &doc(Value::Object(m))).unwrap();
        let named = out
            .feedback
            .iter()
            .any(|f| f.severity == FeedbackSeverity::Block && f.condition.as_str() == fields[k].0);
        if out.status == ValidationStatus::Blocked && !out.gate_result && named {
            hits += 1;
        }
    }
    outcome(hits == 100, format!("{hits}/100 blocked with the missing condition named"))
}

fn example_fidelity() -> Outcome {
    let narrative = parse_ruleset(include_str!("../data/rulesets/damage_narrative.json")).unwrap();
    let safety = parse_ruleset(include_str!("../data/rulesets/safety_obligation.json")).unwrap();

    let ex1 = run_validation(
        &narrative,
        &doc(json!({
            "report_id": "R-123",
            "device_type": "infusion pump",
            "damage_category": "water ingress",
            "damage_description": "Liquid entered the housing during cleaning.",
            "responsible_party": "Clinic Nord"
        })),
    )
    .unwrap();
    let trace = &ex1.traces[&"c_ready".into()];
    let root = &trace.records[0];
    let ex1_branches: Vec<bool> = trace.children(0).map(|b| b.nonempty).collect();
    let ex1_ok = ex1.status == ValidationStatus::Pass
        && root.rule == TableauRule::Beta
        && root.nonempty
        && ex1_branches == [false, true];

    let ex2 = run_validation(
        &safety,
        &doc(json!({
            "damage_description": "Visible overheating at the charging port.",
            "failure_mode": "thermal runaway"
        })),
    )
    .unwrap();
    let trace = &ex2.traces[&"c_safety".into()];
    let branches: Vec<bool> = trace.children(0).map(|b| b.nonempty).collect();
    let blocked_by_safety = ex2
        .feedback
        .iter()
        .any(|f| f.severity == FeedbackSeverity::Block && f.condition.as_str() == "c_safety");
    let ex2_ok = ex2.status == ValidationStatus::Blocked && blocked_by_safety && branches == [false, false];

    // Without a critical term the obligation disappears.
    let benign = run_validation(&safety, &doc(json!({"damage_description": "Screen cracked after a drop."}))).unwrap();
    let benign_ok = benign.status != ValidationStatus::Blocked;

    outcome(
        ex1_ok && ex2_ok && benign_ok,
        format!(
            "example 1 {:?} branches {ex1_branches:?}; example 2 {:?} branches {branches:?}; no keyword {:?}",
            ex1.status, ex2.status, benign.status
        ),
    )
}

// ---------------------------------------------------------------- similarity

fn vector(pairs: &[(&str, f64)]) -> SimilarityVector {
    let mut v = SimilarityVector {
        tfidf: 0.0,
        domain: 0.0,
        euclidean: 0.0,
        token_overlap: 0.0,
        keyword_overlap: 0.0,
        combined: 0.0,
        confidence: 0.0,
    };
    for (k, x) in pairs {
        match *k {
            "tfidf" => v.tfidf = *x,
            "domain" => v.domain = *x,
            "euclidean" => v.euclidean = *x,
            "token_overlap" => v.token_overlap = *x,
            "keyword_overlap" => v.keyword_overlap = *x,
            "combined" => v.combined = *x,
            "confidence" => v.confidence = *x,
            other => panic!("unknown metric {other}"),
        }
    }
    v
}

/// The grade matrix transcribed independently of the bundled data file.
const MATRIX: &[(Grade, f64, f64, &[&[(&str, f64)]])] = &[
    (
        Grade::Exact,
        90.0,
        90.0,
        &[
            &[("combined", 95.0), ("token_overlap", 90.0)],
            &[("domain", 95.0), ("tfidf", 45.0)],
            &[("euclidean", 30.0), ("combined", 95.0)],
        ],
    ),
    (
        Grade::Strong,
        75.0,
        75.0,
        &[
            &[("tfidf", 35.0)],
            &[("domain", 80.0)],
            &[("keyword_overlap", 70.0), ("combined", 80.0)],
            &[("euclidean", 45.0)],
        ],
    ),
    (
        Grade::Moderate,
        45.0,
        40.0,
        &[
            &[("tfidf", 20.0)],
            &[("domain", 50.0)],
            &[("keyword_overlap", 20.0)],
            &[("combined", 50.0), ("confidence", 50.0)],
        ],
    ),
    (Grade::Weak, 25.0, 0.0, &[]),
];

fn classification_matrix() -> Outcome {
    let gr = GradeRuleset::default();
    let mut checks = 0;
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            failures.push(what);
        }
    };
    for (grade, score_min, conf_min, clauses) in MATRIX {
        let base = |clause: &[(&'static str, f64)]| {
            let mut pairs: Vec<(&'static str, f64)> = vec![("combined", *score_min), ("confidence", *conf_min)];
            for (m, t) in clause {
                pairs.retain(|(k, _)| k != m);
                pairs.push((*m, *t));
            }
            pairs
        };
        if clauses.is_empty() {
            let g = classify(&vector(&base(&[])), &gr);
            check(g.grade == *grade, format!("{grade:?} at its minimums gave {:?}", g.grade));
            let g = classify(&vector(&[("combined", score_min - 1e-9), ("confidence", 100.0)]), &gr);
            check(g.grade < *grade, format!("{grade:?} below score_min gave {:?}", g.grade));
            continue;
        }
        for (ci, clause) in clauses.iter().enumerate() {
            let pairs = base(clause);
            let g = classify(&vector(&pairs), &gr);
            check(g.grade == *grade, format!("{grade:?} clause {ci} gave {:?}", g.grade));
            // Nudging any one threshold of the clause below its bound drops the row.
            for (m, t) in clause.iter() {
                let mut below = pairs.clone();
                for p in below.iter_mut().filter(|(k, _)| k == m) {
                    p.1 = t - 1e-9;
                }
                let g = classify(&vector(&below), &gr);
                check(g.grade < *grade, format!("{grade:?} clause {ci} with {m} below {t} gave {:?}", g.grade));
            }
            // Below the row minimums the clause alone does not fire it.
            let mut low = pairs.clone();
            for p in low.iter_mut().filter(|(k, _)| *k == "combined" || *k == "confidence") {
                if p.0 == "combined" && clause.iter().all(|(m, _)| *m != "combined") {
                    p.1 = score_min - 1e-9;
                }
                if p.0 == "confidence" && conf_min > &0.0 && clause.iter().all(|(m, _)| *m != "confidence") {
                    p.1 = conf_min - 1e-9;
                }
            }
            if low != pairs {
                let g = classify(&vector(&low), &gr);
                check(g.grade < *grade, format!("{grade:?} clause {ci} under minimums gave {:?}", g.grade));
            }
        }
    }
    let worked = [
        (vector(&[("combined", 96.0), ("confidence", 92.0), ("token_overlap", 91.0)]), Grade::Exact),
        (vector(&[("combined", 80.0), ("confidence", 78.0), ("tfidf", 36.0)]), Grade::Strong),
        (vector(&[("combined", 50.0), ("confidence", 45.0), ("tfidf", 22.0)]), Grade::Moderate),
        (vector(&[("combined", 30.0), ("confidence", 5.0)]), Grade::Weak),
    ];
    for (v, want) in worked {
        let g = classify(&v, &gr);
        check(g.grade == want, format!("worked vector gave {:?}, want {want:?}", g.grade));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{checks} table checks, 4 worked vectors")
    } else {
        format!("{} of {checks} failed: {}", failures.len(), failures.join("; "))
    };
    outcome(pass, detail)
}

fn normalization() -> Outcome {
    let e: Vec<f64> = [0.0, 1.0, 2.0, 3.0].iter().map(|d| euclidean_similarity(*d)).collect();
    let m: Vec<f64> = [0.0, 5.0, 10.0].iter().map(|d| manhattan_similarity(*d)).collect();
    let close = |got: &[f64], want: &[f64]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-9);
    outcome(
        close(&e, &[100.0, 50.0, 0.0, 0.0]) && close(&m, &[100.0, 50.0, 0.0]),
        format!("euclidean {e:?}, manhattan {m:?}"),
    )
}

fn weighted_score_formula() -> Outcome {
    let counts: BTreeMap<EntityKind, KindCount> = [
        (EntityKind::Date, KindCount { verified: 2, total: 2 }),
        (EntityKind::Identifier, KindCount { verified: 1, total: 1 }),
        (EntityKind::Statement, KindCount { verified: 1, total: 2 }),
    ]
    .into();
    let w = weighted_score(&counts, &CoverageWeights::default());
    let worked = (w - 1.7 / 1.9).abs() <= 1e-9;

    let p = FallbackEmbedder::default();
    let mut r = rng(0x5c07e);
    let mut full = 0;
    for _ in 0..10 {
        let case = Case::generate(&mut r);
        let text = case.text();
        let job = VerificationJob::new(doc(json!({"narrative": text})), text.clone(), empty_ruleset());
        let rep = run_verification(&job, &p, &RunContext::default()).unwrap();
        if rep.coverage.as_ref().is_some_and(|c| c.weighted_score == 1.0 && c.flags.is_empty()) {
            full += 1;
        }
    }
    outcome(worked && full == 10, format!("worked example {w:.12}, fully matched {full}/10 at S_w = 1"))
}

// ---------------------------------------------------------------- synthetic cases

const DEVICES: &[&str] = &["infusion pump", "patient monitor", "ventilator", "defibrillator", "syringe driver"];
const PARTS: &[&str] = &["housing", "battery cover", "display", "power board", "rear connector"];
const DAMAGE: &[&str] = &["hairline crack", "corrosion", "scorch marks", "moisture residue", "bent pins"];
const PLACES: &[&str] = &["mounting bracket", "cable inlet", "upper seam", "hinge", "vent grille"];
const ACTIVITIES: &[&str] = &["routine cleaning", "patient transport", "a night shift", "battery charging"];
const PREFIXES: &[&str] = &["BF", "KX", "MED", "QT", "ZR"];

const UNRELATED: &[&str] = &[
    "Quarterly revenue figures exceeded the forecast for the northern region.",
    "The marketing team scheduled a webinar about loyalty programs.",
    "Our cafeteria menu now includes vegetarian lasagna on Fridays.",
    "Football supporters gathered downtown before the championship final.",
    "Several volunteers planted oak trees along the riverside path.",
    "The museum extended its opening hours for the summer exhibition.",
    "Freight rates for container shipping dropped sharply in spring.",
    "A local bakery won the award for the best sourdough bread.",
];

/// Word substitutions that keep meaning.
const SYNONYMS: &[(&str, &str)] = &[
    ("received", "delivered"),
    ("stopped", "halted"),
    ("showed", "exhibited"),
    ("reported", "stated"),
    ("estimated", "assessed"),
    ("confirmed", "verified"),
    ("registered", "filed"),
    ("measured", "recorded"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Date,
    Identifier,
    Numeric,
}

#[derive(Debug, Clone)]
struct Sentence {
    /// Text with at most one `{}` placeholder for the structured value.
    template: String,
    slot: Option<(Slot, String)>,
}

impl Sentence {
    fn render(&self) -> String {
        match &self.slot {
            Some((_, v)) => self.template.replacen("{}", v, 1),
            None => self.template.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Case {
    sentences: Vec<Sentence>,
}

fn random_date(r: &mut ChaCha8Rng) -> String {
    format!("{}-{:02}-{:02}", r.random_range(2019..=2025), r.random_range(1..=12), r.random_range(1..=28))
}

fn random_identifier(r: &mut ChaCha8Rng) -> String {
    let alnum: Vec<char> = "ABCDEFGHJKLMNPRSTUVWXYZ0123456789".chars().collect();
    let tail: String = (0..5).map(|_| *alnum.choose(r).unwrap()).collect();
    format!("{}-{}{tail}", PREFIXES.choose(r).unwrap(), r.random_range(1..=9))
}

fn random_numeric(r: &mut ChaCha8Rng) -> String {
    format!("{}.{}", r.random_range(2..=480), r.random_range(1..=9))
}

impl Case {
    fn generate(r: &mut ChaCha8Rng) -> Case {
        let device = *DEVICES.choose(r).unwrap();
        let part = *PARTS.choose(r).unwrap();
        let damage = *DAMAGE.choose(r).unwrap();
        let place = *PLACES.choose(r).unwrap();
        let activity = *ACTIVITIES.choose(r).unwrap();
        let mut s = vec![
            Sentence {
                template: format!("The {device} was received for inspection on {{}}."),
                slot: Some((Slot::Date, random_date(r))),
            },
            Sentence {
                template: format!("Its serial number {{}} was confirmed on the {part} label."),
                slot: Some((Slot::Identifier, random_identifier(r))),
            },
            Sentence {
                template: "Technicians measured a supply voltage of {} V at the input stage.".into(),
                slot: Some((Slot::Numeric, random_numeric(r))),
            },
            Sentence {
                template: format!("The {part} showed {damage} near the {place}."),
                slot: None,
            },
            Sentence {
                template: format!("Staff reported that the {device} stopped during {activity}."),
                slot: None,
            },
            Sentence {
                template: format!("Repair costs for the {part} were estimated at {{}} EUR."),
                slot: Some((Slot::Numeric, random_numeric(r))),
            },
            Sentence {
                template: format!("The complaint was registered under reference {{}} by the {place} team."),
                slot: Some((Slot::Identifier, random_identifier(r))),
            },
        ];
        s.shuffle(r);
        let keep = r.random_range(5..=s.len());
        s.truncate(keep);
        Case { sentences: s }
    }

    fn text(&self) -> String {
        self.sentences.iter().map(Sentence::render).collect::<Vec<_>>().join(" ")
    }

    fn values(&self, slot: Slot) -> BTreeSet<String> {
        self.sentences
            .iter()
            .filter_map(|s| s.slot.as_ref().filter(|(k, _)| *k == slot).map(|(_, v)| v.clone()))
            .collect()
    }
}

fn verify(input: &str, output: &str, p: &dyn EmbeddingProvider) -> VerificationReport {
    let job = VerificationJob::new(doc(json!({"narrative": input})), output, empty_ruleset());
    run_verification(&job, p, &RunContext::default()).unwrap()
}

fn flagged(r: &VerificationReport, kind: EntityKind, verdict: Verdict) -> Vec<&MatchRecord> {
    r.records.iter().filter(|x| x.kind == kind && x.verdict == verdict).collect()
}

fn perturbation_detection() -> Outcome {
    let p = FallbackEmbedder::default();
    let mut r = rng(0xd1ff);

    // In-pattern substitution of one structured value.
    let mut structured_hits = 0;
    for _ in 0..100 {
        let case = Case::generate(&mut r);
        let mut out = case.clone();
        let slots: Vec<usize> = (0..out.sentences.len()).filter(|&i| out.sentences[i].slot.is_some()).collect();
        let i = *slots.choose(&mut r).unwrap();
        let (slot, old) = out.sentences[i].slot.clone().unwrap();
        let taken = case.values(slot);
        let fresh = loop {
            let v = match slot {
                Slot::Date => random_date(&mut r),
                Slot::Identifier => random_identifier(&mut r),
                Slot::Numeric => random_numeric(&mut r),
            };
            if v != old && !taken.contains(&v) {
                break v;
            }
        };
        out.sentences[i].slot = Some((slot, fresh));
        let rep = verify(&case.text(), &out.text(), &p);
        let structured = |v: Verdict| {
            rep.records
                .iter()
                .filter(|x| x.kind.is_structured() && x.verdict == v)
                .count()
        };
        if structured(Verdict::Hallucinated) == 1 && structured(Verdict::Missing) == 1 {
            structured_hits += 1;
        }
    }

    // One statement replaced by an unrelated one.
    let mut unrelated_hits = 0;
    for _ in 0..100 {
        let case = Case::generate(&mut r);
        let mut out: Vec<String> = case.sentences.iter().map(Sentence::render).collect();
        let i = r.random_range(0..out.len());
        let replacement = UNRELATED.choose(&mut r).unwrap().to_string();
        out[i] = replacement.clone();
        let rep = verify(&case.text(), &out.join(" "), &p);
        let hit = flagged(&rep, EntityKind::Statement, Verdict::Hallucinated)
            .iter()
            .any(|x| x.output_entity.as_ref().is_some_and(|e| e.surface == replacement));
        if hit {
            unrelated_hits += 1;
        }
    }

    // Meaning-preserving edits: one synonym swap or a reordered sentence pair.
    let mut paraphrase_flags = 0;
    for _ in 0..100 {
        let case = Case::generate(&mut r);
        let mut out: Vec<String> = case.sentences.iter().map(Sentence::render).collect();
        let swappable: Vec<usize> = (0..out.len())
            .filter(|&i| SYNONYMS.iter().any(|(w, _)| out[i].contains(w)))
            .collect();
        if r.random_bool(0.5) && !swappable.is_empty() {
            let i = *swappable.choose(&mut r).unwrap();
            let (w, s) = SYNONYMS.iter().find(|(w, _)| out[i].contains(w)).unwrap();
            out[i] = out[i].replacen(w, s, 1);
        } else {
            let i = r.random_range(0..out.len() - 1);
            out.swap(i, i + 1);
        }
        let rep = verify(&case.text(), &out.join(" "), &p);
        let statement_flags =
            flagged(&rep, EntityKind::Statement, Verdict::Hallucinated).len() + flagged(&rep, EntityKind::Statement, Verdict::Missing).len();
        if statement_flags > 0 {
            paraphrase_flags += 1;
        }
    }

    outcome(
        structured_hits == 100 && unrelated_hits >= 70 && paraphrase_flags <= 20,
        format!(
            "substitution {structured_hits}/100, unrelated {unrelated_hits}/100 (>= 70), paraphrase flagged {paraphrase_flags}/100 (<= 20)"
        ),
    )
}

// ---------------------------------------------------------------- pipeline

fn big_job(seed: u64) -> VerificationJob {
    let mut r = rng(seed);
    let a = Case::generate(&mut r);
    let b = Case::generate(&mut r);
    let input = format!("{} {}", a.text(), b.text());
    let mut out: Vec<String> = a.sentences.iter().chain(&b.sentences).map(Sentence::render).collect();
    out[1] = UNRELATED[0].to_string();
    out.swap(2, 3);
    VerificationJob::new(doc(json!({"narrative": input})), out.join(" "), empty_ruleset())
}

fn with_workers(job: &VerificationJob, n: usize) -> VerificationJob {
    let mut j = job.clone();
    j.options.pool.worker_count = n;
    j
}

fn concurrency_determinism() -> Outcome {
    let p = FallbackEmbedder::default();
    let job = big_job(0xc0c0);
    let baseline = run_verification(&with_workers(&job, 1), &p, &RunContext::default())
        .unwrap()
        .to_json();
    let mut runs = 0;
    let mut diffs = 0;
    for n in [1, 4, 16] {
        let j = with_workers(&job, n);
        for rep in 0..20u64 {
            let hook = FaultInjector::jitter_only(rep * 31 + n as u64, 300);
            let rc = RunContext {
                hook: &hook,
                ..RunContext::default()
            };
            runs += 1;
            if run_verification(&j, &p, &rc).unwrap().to_json() != baseline {
                diffs += 1;
            }
        }
    }
    outcome(diffs == 0, format!("{runs} runs over pool sizes 1/4/16, {diffs} differ from the baseline"))
}

fn symbolic_json(r: &VerificationReport) -> Vec<String> {
    r.records
        .iter()
        .filter(|x| x.kind.is_structured())
        .map(|x| serde_json::to_string(x).unwrap())
        .collect()
}

fn fault_isolation() -> Outcome {
    let p = FallbackEmbedder::default();
    let mut job = big_job(0xfa17);
    job.options.max_retries = 1;
    let clean = run_verification(&job, &p, &RunContext::default()).unwrap();

    let transient = FaultInjector::score_fraction(FaultMode::TransientOnce, EntityKind::Statement, 10, 3);
    let rc = RunContext {
        hook: &transient,
        ..RunContext::default()
    };
    let t = run_verification(&job, &p, &rc).unwrap();
    let transient_ok = t.stats.retries > 0 && t.stats.failed_tasks == 0 && t.records == clean.records && t.coverage == clean.coverage;

    let persistent = FaultInjector::score_fraction(FaultMode::Persistent, EntityKind::Statement, 10, 3);
    let rc = RunContext {
        hook: &persistent,
        ..RunContext::default()
    };
    let f = run_verification(&job, &p, &rc).unwrap();
    let unverified: Vec<&MatchRecord> = f.records.iter().filter(|x| x.verdict == Verdict::Unverified).collect();
    let only_statements = unverified.iter().all(|x| x.kind == EntityKind::Statement);
    let phrases = |r: &VerificationReport| -> Vec<String> {
        r.records
            .iter()
            .filter(|x| x.kind == EntityKind::Phrase)
            .map(|x| serde_json::to_string(x).unwrap())
            .collect()
    };
    let persistent_ok = f.stats.failed_tasks > 0
        && !unverified.is_empty()
        && only_statements
        && !f.warnings.is_empty()
        && symbolic_json(&f) == symbolic_json(&clean)
        && phrases(&f) == phrases(&clean)
        && serde_json::to_string(&f.validation).unwrap() == serde_json::to_string(&clean.validation).unwrap();

    outcome(
        transient_ok && persistent_ok,
        format!(
            "transient: {} retries, {} failed; persistent: {} failed tasks, {} unverified statements, symbolic records identical: {}",
            t.stats.retries,
            t.stats.failed_tasks,
            f.stats.failed_tasks,
            unverified.len(),
            symbolic_json(&f) == symbolic_json(&clean)
        ),
    )
}

/// 20 conditions (14 core, 4 meta, 2 aggregate) over a 2 kB input.
fn symbolic_latency() -> Outcome {
    let mut core = Vec::new();
    for i in 0..14 {
        let field = format!("f{}", i % 7);
        let c = match i % 5 {
            0 => json!({"predicate": "field_present", "args": {"field": field}}),
            1 => json!({"predicate": "nonempty", "args": {"field": field}}),
            2 => json!({"predicate": "min_length", "args": {"field": field, "n": 40}}),
            3 => json!({"predicate": "field_matches", "args": {"field": field, "pattern": "\\b[A-Z]{2}-\\d{3,}\\b"}}),
            _ => json!({"predicate": "keyword_present", "args": {"words": ["overheating", "smoke", "leak", "crack"]}}),
        };
        let mut c = c;
        c["id"] = json!(format!("c{i}"));
        core.push(c);
    }
    let rs = parse_ruleset(
        &json!({
            "schema_version": 1,
            "profile": "latency",
            "core_conditions": core,
            "meta_conditions": [
                {"id": "m0", "formula": "(c0 & c1 & c2) | (c3 & c4)"},
                {"id": "m1", "formula": "!c4 | (c5 & c6)"},
                {"id": "m2", "formula": "subset(C_req, C_pos) & (c7 | c8 | c9)"},
                {"id": "m3", "formula": "(m0 & m1) | !(c10 & c11) | (c12 & c13)"}
            ],
            "aggregate_conditions": [
                {"id": "a0", "statistic": "count", "over": "C_neg", "comparator": "<=", "tau": 3},
                {"id": "a1", "statistic": "count", "over": "C_sat", "comparator": ">=", "tau": 5}
            ]
        })
        .to_string(),
    )
    .unwrap();
    let mut r = rng(0x1a7e);
    let words = ["pump", "housing", "leak", "seal", "valve", "sensor", "crack", "report", "KX-4821", "fluid"];
    let mut m = serde_json::Map::new();
    for f in 0..7 {
        let text: Vec<&str> = (0..50).map(|_| *words.choose(&mut r).unwrap()).collect();
        m.insert(format!("f{f}"), json!(text.join(" ")));
    }
    let input = doc(Value::Object(m));
    let size: usize = input.values().filter_map(Value::as_str).map(str::len).sum();
    let mut times: Vec<f64> = (0..51)
        .map(|_| {
            let t = Instant::now();
            run_validation(&rs, &input).unwrap();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    outcome(
        median < 20.0 && size >= 2000,
        format!("median {median:.3} ms over 51 runs, 20 conditions, {size} byte input"),
    )
}

// ---------------------------------------------------------------- retrieval

const VOCAB: &[&str] = &[
    "pump", "valve", "sensor", "housing", "seal", "cable", "alarm", "battery", "display", "fluid", "pressure", "motor",
    "filter", "circuit", "tubing", "bracket", "leakage", "crack", "firmware", "calibration", "inspection", "cleaning",
    "transport", "shift", "operator", "clinic", "gasket", "invoice", "photo", "signature",
];
const SECTIONS: [(&str, SectionType); 4] = [
    ("narrative", SectionType::Narrative),
    ("technical", SectionType::Technical),
    ("legal", SectionType::Legal),
    ("evidence", SectionType::Evidence),
];

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn retrieval() -> Outcome {
    let mut r = rng(0x4e7);
    let mut docs = Vec::new();
    for rep in 0..125 {
        for (name, _) in SECTIONS {
            let n = r.random_range(6..=30);
            let words: Vec<&str> = (0..n).map(|_| *VOCAB.choose(&mut r).unwrap()).collect();
            docs.push(SourceDoc {
                report_id: format!("R-{}", 100 + rep),
                section_type: name.into(),
                text: words.join(" "),
            });
        }
    }
    let p = FallbackEmbedder::default();
    let idx = index_corpus(&docs, &p, 64, &Extractor::default()).unwrap();
    let vectors: Vec<Vec<f32>> = idx.chunks.iter().map(|c| p.embed(&c.text).unwrap()).collect();
    let schema = QuerySchema::default();

    let (mut unsound, mut over_budget, mut misordered) = (0, 0, 0);
    for _ in 0..1000 {
        let report = r.random_bool(0.5).then(|| format!("R-{}", r.random_range(100..225)));
        let section = r.random_bool(0.5).then(|| SECTIONS[r.random_range(0..4)]);
        let n = r.random_range(1..=6);
        let mut q: Vec<String> = (0..n).map(|_| VOCAB.choose(&mut r).unwrap().to_string()).collect();
        if let Some(id) = &report {
            q.push(format!("report {id}"));
        }
        if let Some((name, _)) = section {
            q.insert(0, name.to_string());
        }
        let query = q.join(" ");
        let budget = r.random_range(0..=300);

        let (sq, ranked) = retrieve(&idx, &query, &schema, &p, budget).unwrap();
        let admissible = |i: usize| {
            let c = &idx.chunks[i];
            report.as_ref().is_none_or(|id| &c.report_id == id) && section.is_none_or(|(_, s)| c.section_type == s)
        };
        // Narrowing soundness.
        let cands = narrow(&idx, &sq);
        if cands.iter().any(|c| c.index >= idx.len() || !admissible(c.index))
            || ranked.iter().any(|c| !admissible(c.chunk_id as usize))
        {
            unsound += 1;
        }
        // Budget safety.
        let mut used = 0;
        for c in &ranked {
            used += c.token_count;
            if c.cumulative_tokens != used {
                over_budget += 1;
            }
        }
        if used > budget {
            over_budget += 1;
        }
        // Exhaustive ranking over every admissible chunk.
        let qv = p.embed(&query).unwrap();
        let mut all: Vec<(f64, u64, usize)> = (0..idx.len())
            .filter(|&i| admissible(i))
            .map(|i| (cosine(&qv, &vectors[i]), idx.chunks[i].id, idx.chunks[i].token_count))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut expect = Vec::new();
        let mut fill = 0;
        if budget > 0 {
            for (_, id, tokens) in all {
                if fill + tokens <= budget {
                    fill += tokens;
                    expect.push(id);
                }
            }
        }
        let got: Vec<u64> = ranked.iter().map(|c| c.chunk_id).collect();
        if got != expect {
            misordered += 1;
        }
    }
    outcome(
        unsound == 0 && over_budget == 0 && misordered == 0,
        format!(
            "1000 queries over {} chunks: {unsound} unsound, {over_budget} budget violations, {misordered} order mismatches",
            idx.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("tableaux oracle equivalence", tableaux_oracle),
        ("gate completeness", gate_completeness),
        ("example fidelity", example_fidelity),
        ("classification matrix", classification_matrix),
        ("normalization formulas", normalization),
        ("weighted score formula", weighted_score_formula),
        ("synthetic perturbation detection", perturbation_detection),
        ("concurrency determinism", concurrency_determinism),
        ("fault isolation", fault_isolation),
        ("symbolic latency", symbolic_latency),
        ("retrieval narrowing, budget and order", retrieval),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
