//! Generate-then-read multiple-choice QA harness.
//!
//! The crate covers dataset loading, prompt rendering, endpoint clients, the
//! generated-context cache, an exact retrieval index, the reader, metrics and
//! a deterministic mock server for all endpoint roles.

pub mod cluster;
pub mod config;
pub mod contexts;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod hashing;
pub mod manifest;
pub mod mock;
pub mod pipeline;
pub mod prompt;
pub mod reader;
pub mod retrieval;
pub mod synth;
