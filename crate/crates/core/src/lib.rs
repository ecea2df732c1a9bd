//! Cascaded reasoning for generative recommendation over semantic IDs.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: interaction logs, temporal splits, synthetic Zipf corpora and
//!   next-item training examples.
//! - [`tokenizer`]: residual k-means codebooks, semantic-ID assignment and the
//!   prefix trie used for constrained decoding.
//! - [`model`]: a small pre-norm decoder-only transformer with a plain causal
//!   regime and a query-anchored regime driven by a progressive attention mask,
//!   plus the staged re-encoding reference and attention-pair accounting.
//! - [`training`]: recommendation and reasoning-diversity losses, Adam, the
//!   epoch loop and a finite-difference gradient check.
//! - [`decoding`]: trie-constrained beam search and the teacher-forced pass.
//! - [`metrics`]: Recall/NDCG/DivR/ORR and the bias-amplification report.
//! - [`cli`]: experiment configuration, subcommands and reports.
//!
//! Runnable walkthroughs live under `crates/core/examples/`.

pub mod cli;
pub mod dataset;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tokenizer;
pub mod training;
pub(crate) mod util;

pub use error::{Error, Result};
