//! Molar: multimodal sequential recommendation with post-alignment
//! contrastive training.
//!
//! The pipeline has three moving parts. A multimodal item encoder turns each
//! catalog item (text tokens, structured attributes, image features) into a
//! d-dimensional embedding via a learned readout token. A causal transformer
//! consumes the item-embedding history of a user and emits a content-based
//! user embedding from a trailing user token. Classic ID-based sequential
//! recommenders (FPMC, GRU4Rec, SASRec) produce a second, collaborative user
//! embedding, and a symmetric InfoNCE objective aligns the two views on top
//! of the point-wise BCE recommendation loss.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `molar` binary for the end-to-end pipeline.

mod binio;
pub mod cli;
pub mod data;
pub mod dueg;
pub mod error;
pub mod eval;
pub mod idmodels;
pub mod itemrep;
pub mod numcore;
pub mod objectives;
pub mod trainer;

pub use error::{MolarError, Result};
