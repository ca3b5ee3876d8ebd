//! Solves a set formula directly and prints the tableau trace.

use veritab::rulekit::parse_formula;
use veritab::rulekit::ConditionId;
use veritab::tableaux::{solve, ConditionUniverse, IdSet};

fn set(ids: &[&str]) -> IdSet {
    ids.iter().map(|s| ConditionId::from(*s)).collect()
}

fn main() {
    let f = parse_formula("(c_dev_type & c_serial & c_category) | (c_category & c_damage_desc & c_party)").unwrap();
    let all = set(&["c_dev_type", "c_serial", "c_category", "c_damage_desc", "c_party"]);
    let satisfied = set(&["c_dev_type", "c_category", "c_damage_desc", "c_party"]);
    let u = ConditionUniverse {
        core: all.clone(),
        all: all.clone(),
        positive: satisfied.clone(),
        satisfied,
        required: Default::default(),
        evaluated: all,
    };
    let sol = solve(&f, &u).unwrap();
    println!("satisfied: {} denotation: {:?}", sol.satisfied(), sol.denotation);
    for r in &sol.trace.records {
        let pad = "  ".repeat(r.depth);
        let mark = if r.nonempty { "open" } else { "closed" };
        println!("{pad}{:?} {} [{mark}]", r.rule, r.fragment);
    }
}
