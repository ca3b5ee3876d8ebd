//! Runs the bundled damage-narrative and safety rulesets over a few inputs.
//!
//! The first input has no serial number, so the technical branch of
//! `c_ready` fails while the narrative branch holds and the job passes.

use serde_json::json;
use veritab::rulekit::parse_ruleset;
use veritab::tableaux::{run_validation, InputDocument};

fn doc(v: serde_json::Value) -> InputDocument {
    serde_json::from_value(v).expect("object")
}

fn main() {
    let narrative = parse_ruleset(include_str!("../data/rulesets/damage_narrative.json")).unwrap();
    let safety = parse_ruleset(include_str!("../data/rulesets/safety_obligation.json")).unwrap();

    let cases = [
        (
            &narrative,
            "serial absent, narrative grounded",
            doc(json!({
                "report_id": "R-123",
                "device_type": "infusion pump",
                "damage_category": "water ingress",
                "damage_description": "Liquid entered the housing during cleaning.",
                "responsible_party": "Clinic Nord"
            })),
        ),
        (
            &narrative,
            "category missing",
            doc(json!({"report_id": "R-124", "device_type": "monitor", "serial_number": "SN-4471"})),
        ),
        (
            &safety,
            "critical keyword without risk class",
            doc(json!({
                "damage_description": "Smoke and overheating near the charger.",
                "failure_mode": "thermal runaway"
            })),
        ),
    ];

    for (rs, label, input) in cases {
        let out = run_validation(rs, &input).unwrap();
        println!("{label}: {:?} (gate {})", out.status, out.gate_result);
        for f in &out.feedback {
            println!("  {:?} {}: {}", f.severity, f.condition, f.message);
        }
    }
}
