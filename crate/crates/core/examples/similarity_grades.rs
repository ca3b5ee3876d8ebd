//! Scores statement pairs on five metrics and grades them.

use veritab::embed::{EmbeddingProvider, FallbackEmbedder};
use veritab::extract::Extractor;
use veritab::simmetrics::{classify, score_pair, GradeRuleset, MetricWeights};
use veritab::text::CorpusStats;

fn main() {
    let pairs = [
        ("The pump stopped after the alarm.", "The pump stopped after the alarm."),
        ("The pump stopped after the alarm.", "After the alarm the pump stopped."),
        ("The pump stopped after the alarm.", "The housing showed a fine crack."),
    ];
    let p = FallbackEmbedder::default();
    let ex = Extractor::default();
    let grades = GradeRuleset::default();
    let docs: Vec<&str> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let stats = CorpusStats::from_documents(&docs);
    for (a, b) in pairs {
        let (ea, eb) = (p.embed(a).unwrap(), p.embed(b).unwrap());
        let v = score_pair(a, b, &ea, &eb, &stats, &ex, &MetricWeights::default());
        let g = classify(&v, &grades);
        println!("{b:?}");
        println!(
            "  tfidf {:.1} domain {:.1} euclid {:.1} tok {:.1} kw {:.1} -> combined {:.1} conf {:.1}: {:?} {}",
            v.tfidf,
            v.domain,
            v.euclidean,
            v.token_overlap,
            v.keyword_overlap,
            v.combined,
            v.confidence,
            g.grade,
            g.satisfied_condition.as_deref().unwrap_or("-")
        );
    }
}
