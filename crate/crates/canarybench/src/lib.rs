//! Desk-scale harness for measuring training-data memorization in code
//! language models via data-extraction attacks, and for quantifying how much
//! differentially private training (DP-SGD) mitigates it.
//!
//! The pipeline: ingest and deduplicate a code corpus, build a prefix/suffix
//! extraction benchmark, train a small autoregressive model with and without
//! DP-SGD, prompt each model with benchmark prefixes, score completions
//! against the true suffixes with CodeBLEU, and analyze which snippets leak
//! and how privacy budgets change that.

// Config validation uses negated comparisons on purpose: `!(x > 0.0)`
// rejects NaN where `x <= 0.0` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod analytics;
pub mod attack;
pub mod cli;
pub mod codebleu;
pub mod corpus;
pub mod dpsgd;
pub mod error;
pub mod modelgw;
pub mod parser;
pub mod synth;
pub mod taxonomy;
pub mod token;
pub mod toylm;

pub use error::{Error, Result};
