//! Audits a generated narrative against its input and prints the report.
//!
//! The output swaps the final `0` of the identifier for an `O`, which shows
//! up as one hallucinated and one missing identifier plus a safe suggestion.

use serde_json::json;
use veritab::embed::{EmbeddingProvider, FallbackEmbedder};
use veritab::pipeline::{run_verification_timed, RunContext, VerificationJob};
use veritab::report::{ProviderSummary, ReportDocument};
use veritab::rulekit::parse_ruleset;

fn main() {
    let rs = parse_ruleset(include_str!("../data/rulesets/damage_narrative.json")).unwrap();
    let input = serde_json::from_value(json!({
        "report_id": "R-123",
        "device_type": "infusion pump",
        "serial_number": "BF-1HTJ0",
        "damage_category": "water ingress",
        "damage_description": "Liquid entered the housing on 2024-11-03 during cleaning."
    }))
    .unwrap();
    let output = "Report R-123: the infusion pump BF-1HTJO was damaged on 03.11.2024. \
                  Liquid entered the housing during cleaning.";

    let job = VerificationJob::new(input, output, rs);
    let p = FallbackEmbedder::default();
    let (report, timing) = run_verification_timed(&job, &p, &RunContext::default()).unwrap();
    let doc = ReportDocument::from_verification(&report, timing, ProviderSummary::new(p.info(), None), true);
    println!("{}", doc.to_json_pretty());
    println!("status {:?}, exit code {}", doc.status, doc.status.exit_code());
}
