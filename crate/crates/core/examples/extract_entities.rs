//! Typed entity extraction with variant normalization.

use veritab::extract::{EntityKind, Extractor, Source};
use veritab::text::CorpusStats;

fn main() {
    let text = "On 2024-11-03 the device BF-1HTJ0 stopped at 37,5 °C. \
                The infusion pump alarm sounded twice. Staff replaced the infusion pump.";
    let ex = Extractor::default();
    let stats = CorpusStats::from_documents(&[text]);
    let set = ex.extract_with_stats(text, Source::Input, &stats);
    for kind in EntityKind::ALL {
        for e in set.of_kind(kind) {
            println!("{:<10} {:<40} variants={:?}", kind.name(), e.canonical, e.variants);
        }
    }
}
