//! Random Hierarchy Model toolkit.
//!
//! The Random Hierarchy Model is an ensemble of probabilistic context-free
//! grammars with a fixed `s`-ary tree geometry: `L` levels, `v` symbols per
//! level and `m` unambiguous production rules per nonterminal. This crate
//! builds grammars from that ensemble, samples derivations, computes exact
//! token probabilities by dynamic programming over the tree, and derives the
//! token-correlation structure (plateaus, sampling-noise floor, effective
//! context window) together with the closed-form learning-curve predictions.
//! The same correlation machinery is applied to character-level text corpora.
//!
//! Positions are 1-based (`1..=d`) wherever they appear in the public API,
//! with the masked token at position `d`. Symbols are 0-based per level.

pub mod corpus;
pub mod correlations;
pub mod error;
pub mod exact;
pub mod fmt;
pub mod grammar;
pub mod params;
pub mod rng;
pub mod theory;
pub mod tree;

pub use corpus::{Corpus, LossRow, LossTable, PowerLawFit};
pub use correlations::{CorrCurve, CorrEntry, CurveSource};
pub use error::{Result, RhmError};
pub use grammar::Grammar;
pub use params::RhmParams;
pub use tree::DerivationTree;

/// A terminal or hidden symbol, `0..v` at every level.
pub type Symbol = u32;
