//! Open-set raga recognition on chroma features.
//!
//! The crate covers the whole pipeline: chroma extraction and synthetic
//! corpora ([`features`]), a supervised temporal-conv classifier
//! ([`classifier`]), Monte Carlo dropout out-of-distribution detection
//! ([`ood`]), contrastive novel class discovery with a self-attention encoder
//! ([`ncd`]), clustering ([`clustering`]) and evaluation ([`metrics`]).
//! [`pipeline`] wires the stages together behind a TOML config and writes
//! deterministic JSON reports.
//!
//! Each capability has a runnable program under `examples/`:
//!
//! ```bash
//! cargo run --release --example synthetic_corpus
//! cargo run --release --example end_to_end
//! ```

pub(crate) mod binio;
pub mod classifier;
pub mod clustering;
pub mod error;
pub mod features;
pub mod metrics;
pub mod ncd;
pub mod numkit;
pub mod ood;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
