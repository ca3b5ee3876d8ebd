//! Verification engine for generated documents.
//!
//! Inputs are gated by a tableaux solver over declarative condition sets
//! ([`rulekit`], [`tableaux`]); generated outputs are audited against their
//! sources by typed entity extraction ([`extract`]), five-metric statement
//! similarity with graded classification ([`simmetrics`]) and bidirectional
//! coverage scoring ([`coverage`]). Retrieval narrows a corpus symbolically
//! before exact embedding ranking ([`retrieve`]), and whole jobs run on a
//! supervised worker pool ([`pipeline`]).
//!
//! Each capability has a runnable example under `examples/`:
//!
//! ```bash
//! cargo run -p veritab --example input_gate
//! ```

pub mod cli;
pub mod coverage;
pub mod embed;
pub mod extract;
pub mod pipeline;
pub mod report;
pub mod retrieve;
pub mod rulekit;
pub mod simmetrics;
pub mod tableaux;
pub mod text;
