//! Knowledge-grounded dialogue generation that adapts quickly to changing
//! knowledge graphs.
//!
//! * [`tensor`]: dense tensors, reverse-mode autodiff, GRU cell, Adam.
//! * [`kg`]: knowledge graphs, adjacency tensors, triple mutations.
//! * [`corpus`]: dialogue data, vocabulary, splits, synthetic corpora.
//! * [`model`]: the copy-and-reason seq2seq model.
//! * [`meta`]: plain training, adversarial meta-learning, fast adaptation.
//! * [`metrics`]: BLEU, perplexity, distinct-n and keyword metrics.
//! * [`cli`]: the command-line front end.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod kg;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
