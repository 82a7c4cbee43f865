//! Retrieval-augmented generation engine and evaluation toolkit for
//! multiple-choice music question answering.
//!
//! Pipeline: [`corpus`] chunks documents into passages, [`sparse_index`] and
//! [`dense_index`] index them, [`retrieval`] selects a budgeted top-k
//! context, [`generation`] builds prompts and parses answers, and
//! [`evaluation`] scores benchmarks. [`benchgen`] builds new benchmarks and
//! [`finetune_export`] writes training records.

pub mod benchgen;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dense_index;
pub mod error;
pub mod evaluation;
pub mod finetune_export;
pub mod generation;
mod http;
mod persist;
pub mod retrieval;
pub mod sparse_index;
pub mod tokenizer;

pub use error::{Error, Result};
pub use http::Backoff;
