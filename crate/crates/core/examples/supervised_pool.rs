//! Runs a verification job under injected faults and jitter.
//!
//! Transient failures are retried on a fresh worker; persistent ones leave
//! only the affected statement records unverified.

use serde_json::json;
use veritab::embed::FallbackEmbedder;
use veritab::extract::EntityKind;
use veritab::pipeline::{plan_pool, run_verification, FaultInjector, FaultMode, RunContext, VerificationJob};
use veritab::rulekit::parse_ruleset;

fn main() {
    let rs = parse_ruleset(r#"{"schema_version": 1, "profile": "demo", "core_conditions": []}"#).unwrap();
    let input = serde_json::from_value(json!({
        "text": "The pump stopped on 2024-11-03. The alarm sounded twice. Staff replaced the tubing. \
                 The device BF-1HTJ0 was returned for inspection."
    }))
    .unwrap();
    let output = "The pump stopped on 03.11.2024. The alarm sounded two times. \
                  Staff replaced the tubing. The device BF-1HTJ0 was returned.";
    let mut job = VerificationJob::new(input, output, rs);
    job.options.pool = plan_pool(800, 200, 16).unwrap();
    println!("pool: {:?}", job.options.pool);

    // Injected panics are caught by the pool; keep them off the terminal.
    std::panic::set_hook(Box::new(|_| {}));
    let p = FallbackEmbedder::default();
    for (label, mode) in [
        ("no faults", None),
        ("transient once", Some(FaultMode::TransientOnce)),
        ("persistent", Some(FaultMode::Persistent)),
        ("panic once", Some(FaultMode::PanicOnce)),
    ] {
        let hook = match mode {
            Some(m) => FaultInjector::score_fraction(m, EntityKind::Statement, 50, 7).with_jitter(7, 200),
            None => FaultInjector::jitter_only(7, 200),
        };
        let rc = RunContext {
            hook: &hook,
            ..RunContext::default()
        };
        let r = run_verification(&job, &p, &rc).unwrap();
        let c = r.coverage.as_ref().unwrap();
        println!(
            "{label:<15} retries {} failed {} flags {} S_w {:.3} warnings {:?}",
            r.stats.retries,
            r.stats.failed_tasks,
            c.flags.len(),
            c.weighted_score,
            r.warnings
        );
    }
}
