//! Token-efficient research question answering.
//!
//! A question flows through three layers. The Reasoner turns it into a [`types::QueryPlan`],
//! the Executor aggregates data from a [`datasources::DataSource`] into a bounded
//! [`types::StatisticalSummary`] without any model calls, and the Synthesizer writes a
//! narrative from that summary alone. Raw records never reach a language model, so the
//! token cost of a run does not grow with the size of the underlying dataset.

pub mod bench;
pub mod cli;
pub mod datasources;
pub mod error;
pub mod executor;
pub mod pipeline;
pub mod provider;
pub mod service;
pub mod reasoner;
pub mod synthesizer;
pub mod tokens;
pub mod types;

pub use pipeline::{run_pipeline, Pipeline};
pub use types::{QueryPlan, RunRecord, StatisticalSummary, UserQuery};
