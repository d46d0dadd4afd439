//! Desk-scale lab for fact-gated policy optimization on synthetic visual
//! scenes.
//!
//! The pipeline: a symbolic scene environment with exactly enumerable visual
//! facts, a tabular autoregressive policy that emits think-segment claims and
//! boxed answers, a pairwise visual-fidelity judge (deterministic oracle or
//! remote chat endpoint), reward fusion strategies that gate or mix the
//! fidelity signal, a group-relative policy-gradient trainer, and a data
//! curation pipeline that attaches pseudo ground truth and reference
//! responses to every training sample.

pub mod config;
pub mod curation;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod judge;
pub mod metrics;
pub mod rng;
pub mod policy;
pub mod reward;
pub mod scene;
pub mod trajectory;

pub use error::{Error, Result};
