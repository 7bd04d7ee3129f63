//! Pattern-based knowledge component discovery from student code, and
//! KC-conditioned worked example generation with an evaluation harness.
//!
//! Stages: [`corpus`] ingestion and sampling, [`ast`] parsing and subtree
//! normalization, [`sann`] attention scoring, [`discovery`] latent
//! clustering into a KC inventory, [`genkit`] prompting, [`evalkit`]
//! rubric statistics, and [`pipeline`] for reproducible runs.

pub mod artifact;
pub mod ast;
pub mod corpus;
pub mod discovery;
pub mod evalkit;
pub mod genkit;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sann;
pub mod synth;
