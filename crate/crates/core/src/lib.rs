//! LLM-driven dataset simulation for hypothesis prototyping.
//!
//! This crate simulates tabular datasets about real-world entities by querying
//! chat-completion models once per (entity, property) cell, and evaluates the
//! simulated data against ground truth with regression- and correlation-based
//! analyses, including the simulation error gap between models trained on
//! simulated vs. real data.
//!
//! The main pieces:
//!
//! - [`model`] — entities, property specs, datasets, typed cell values.
//! - [`gateway`] — chat-completion transport with retries, bounded
//!   parallelism, a content-addressed on-disk cache, and a replay mode that
//!   resolves every call from the cache (deterministic, network-free).
//! - [`promptkit`] — every prompt template the system sends.
//! - [`extract`] — robust parsers for messy model output.
//! - [`simulator`] — grid simulation and self-correction passes.
//! - [`pipeline`] — hypothesis text → properties → entities → dataset.
//! - [`stats`] — fidelity metrics and analysis models, from scratch.
//! - [`bench`] — experiment runners for the zoo / countries / athletes
//!   domains with report and plot-data emission.

pub mod bench;
pub mod extract;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod promptkit;
pub mod simulator;
pub mod stats;
