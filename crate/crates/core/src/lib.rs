//! Toolkit for parsing free-text addresses as they appear in payment
//! messages.
//!
//! The pipeline turns clean, per-country address corpora into noisy
//! training data ([`augment`]), trains a structured linear tagger on it
//! ([`tagger`]), exports subword-aligned data for external models
//! ([`align`]), scores external and generative parsers ([`interop`],
//! [`llm`]) and reports token-level metrics ([`eval`]).

pub mod align;
pub mod augment;
pub mod desk;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod interop;
pub mod llm;
pub mod schema;
pub mod seed;
pub mod tagger;

pub use error::{Error, Result};
pub use ingest::Corpus;
pub use schema::{BaseTag, BioLabel, Prefix, Sample};
