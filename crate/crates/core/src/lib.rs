//! copyforge-core: a self-contained sequence-to-sequence engine built around
//! an explicit copy mechanism.
//!
//! The crate provides, bottom to top:
//!
//! - [`autodiff`]: an arena-tape reverse-mode differentiator over `f64`
//!   tensors, with a finite-difference checker.
//! - [`vocab`]: tokenization, frequency-cutoff vocabulary construction, and
//!   the extended-vocabulary encoding that gives source-only tokens ids.
//! - [`model`]: a small attention encoder, an LSTM decoder with input
//!   feeding, and the copy-mixture output layer that blends a generation
//!   distribution with attention-weighted copying.
//! - [`losses`]: the mixture negative log-likelihood and a supervised
//!   decomposition that trains the copy switch directly, in two variants
//!   (always copy when possible / copy only out-of-vocabulary tokens).
//! - [`trainer`]: Adam with decoupled weight decay, gradient clipping,
//!   deterministic batching, CSV logs and binary checkpoints.
//! - [`decode`]: beam search over the mixture distribution with n-gram
//!   repeat blocking.
//! - [`metrics`]: ROUGE, copy precision, novel n-gram rate, transposition-
//!   aware edit similarity, and copy-vs-generation bucket accuracy.
//! - [`d2t`]: a synthetic data-to-text benchmark (game records to short
//!   summaries) with a rule-based relation extractor and the RG/CS/CO
//!   fidelity metrics.
//! - [`config`] / [`pipeline`]: flat key=value run configuration and the
//!   end-to-end commands the CLI dispatches to.

pub mod autodiff;
pub mod config;
pub mod d2t;
pub mod decode;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod trainer;
pub mod vocab;
