//! Tokenization and experiment accounting for longitudinal clinical event
//! streams.
//!
//! The crate covers the full path from MEDS-style event files to model
//! inputs and the statistics used to compare tokenization strategies:
//!
//! - [`events`]: event data model, JSONL interchange, patient splitting
//! - [`synth`]: deterministic synthetic cohorts
//! - [`vocab`]: per-concept decile bins and vocabulary construction
//! - [`tokenizer`]: workflow expansion, event and time encoding
//! - [`packer`]: token-budget packing with patient-boundary masks
//! - [`compute`]: parameter counts and 6ND FLOPs accounting
//! - [`transfer`]: out-of-vocabulary rates for a transferred vocabulary
//! - [`stats`]: AUROC, balanced few-shot sampling, REML mixed models
//! - [`reproduce`]: fixture pipelines checked against reference tables

pub mod compute;
pub mod error;
pub mod events;
pub mod packer;
pub mod reproduce;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tokenizer;
pub mod transfer;
pub mod vocab;

pub use error::{Error, Result};
