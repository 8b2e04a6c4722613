//! Function-level Solidity completion benchmarking and retrieval-augmented
//! repair.
//!
//! The pipeline: [`corpus`] builds comment-anchored completion tasks,
//! [`context`] cuts a token-budgeted window of preceding code, [`repair`]
//! prompts a model and drives the complete → verify → retrieve → repair loop
//! using [`executor`] feedback and [`retrieval`], and [`metrics`] scores the
//! outcome. [`harness`] persists and replays whole runs.

pub mod context;
pub mod corpus;
pub mod executor;
pub mod harness;
pub mod lexer;
pub mod metrics;
pub mod repair;
pub mod retrieval;
