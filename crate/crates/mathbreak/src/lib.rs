//! mathbreak: an adversarial-attack harness that probes the robustness of
//! math-reasoning language models by substituting a single word of a problem
//! with candidates drawn from embedding-space neighbors, a WordNet lexicon,
//! and masked-language-model predictions.
//!
//! The crate is organized around the attack pipeline:
//!
//! - [`corpus`]: dataset loading and exact answer canonicalization
//! - [`candidates`]: candidate-word generation, filtering, and merging
//! - [`perturb`]: word tokenization and local/global substitution
//! - [`gateway`]: model access (HTTP, subprocess, scripted) with caching,
//!   retries, rate limiting, audit logging, and answer extraction
//! - [`engine`]: the per-question attack loop, campaign runner, and
//!   transferability evaluation over persisted traces
//! - [`metrics`]: accuracy/length summaries, ratio histograms, and reports
//! - [`config`]: the harness configuration file

pub mod candidates;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod perturb;

pub use error::{Error, Result};
