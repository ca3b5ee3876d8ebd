//! Indexes a small two-report corpus and runs scoped queries.

use veritab::embed::FallbackEmbedder;
use veritab::extract::Extractor;
use veritab::retrieve::{index_corpus, retrieve, QuerySchema, SchemaTerm, SourceDoc};

fn doc(report: &str, section: &str, text: &str) -> SourceDoc {
    SourceDoc {
        report_id: report.into(),
        section_type: section.into(),
        text: text.into(),
    }
}

fn main() {
    let corpus = [
        doc("R-123", "technical", "Rated voltage 230 V. The pump motor draws 1.2 A at full load."),
        doc("R-123", "legal", "The operator bears liability for cleaning damage under the service contract."),
        doc("R-123", "narrative", "During cleaning, liquid entered the pump housing and the alarm sounded."),
        doc("R-200", "technical", "Battery capacity 2400 mAh. Charger output 5 V."),
        doc("R-200", "narrative", "The monitor fell from the cart and the screen cracked."),
    ];
    let p = FallbackEmbedder::default();
    let idx = index_corpus(&corpus, &p, 64, &Extractor::default()).unwrap();
    let mut schema = QuerySchema::default();
    schema.terms.push(SchemaTerm {
        term: "rated voltage".into(),
        association: "electrical".into(),
    });

    for (q, budget) in [
        ("technical data for report R-123", 200),
        ("who is liable for cleaning damage", 200),
        ("rated voltge of the pump", 20),
    ] {
        let (sq, ranked) = retrieve(&idx, q, &schema, &p, budget).unwrap();
        println!("{q:?} ids={:?} sections={:?} terms={:?}", sq.report_ids, sq.section_types, sq.terms);
        for r in ranked {
            println!(
                "  #{} {} {:?} tier {} sim {:.3} tokens {}/{}",
                r.chunk_id, r.report_id, r.section_type, r.tier, r.similarity, r.token_count, r.cumulative_tokens
            );
        }
    }
}
