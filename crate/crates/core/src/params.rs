//! Hyperparameters of the hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RhmError};

/// The tuple `(L, s, v, m)` plus the two seeds that make every random
/// decision reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RhmParams {
    /// Number of levels `L` between the root and the leaves.
    pub depth: usize,
    /// Branching factor `s`: every production rule emits an `s`-tuple.
    pub branching: usize,
    /// Vocabulary size `v`, the same at every level.
    pub vocab: usize,
    /// Production rules per nonterminal, `m`.
    pub rules: usize,
    pub grammar_seed: u64,
    pub sample_seed: u64,
}

impl RhmParams {
    /// Validates and builds a parameter set with both seeds at 0.
    pub fn new(depth: usize, branching: usize, vocab: usize, rules: usize) -> Result<Self> {
        let params = RhmParams {
            depth,
            branching,
            vocab,
            rules,
            grammar_seed: 0,
            sample_seed: 0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_grammar_seed(mut self, seed: u64) -> Self {
        self.grammar_seed = seed;
        self
    }

    pub fn with_sample_seed(mut self, seed: u64) -> Self {
        self.sample_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(RhmError::constraint("L < 1 (need L >= 1)"));
        }
        if self.branching < 2 {
            return Err(RhmError::constraint("s < 2 (need s >= 2)"));
        }
        if self.vocab < 2 {
            return Err(RhmError::constraint("v < 2 (need v >= 2)"));
        }
        if self.rules < 1 {
            return Err(RhmError::constraint("m < 1 (need m >= 1)"));
        }
        let Some(tuples) = checked_pow(self.vocab, self.branching) else {
            return Err(RhmError::constraint(format!(
                "v^s = {}^{} overflows usize",
                self.vocab, self.branching
            )));
        };
        if checked_pow(self.branching, self.depth).is_none() {
            return Err(RhmError::constraint(format!(
                "d = s^L = {}^{} overflows usize",
                self.branching, self.depth
            )));
        }
        let max_rules = tuples / self.vocab;
        if self.rules > max_rules {
            return Err(RhmError::constraint(format!(
                "m > v^(s-1): {} > {}^{} = {} (unambiguity requires m <= v^(s-1))",
                self.rules,
                self.vocab,
                self.branching - 1,
                max_rules
            )));
        }
        Ok(())
    }

    /// Sequence length `d = s^L`.
    pub fn seq_len(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    /// Number of distinct `s`-tuples, `v^s`.
    pub fn num_tuples(&self) -> usize {
        self.vocab.pow(self.branching as u32)
    }

    /// `v^(s-1)`, the largest admissible `m`.
    pub fn max_rules(&self) -> usize {
        self.vocab.pow(self.branching as u32 - 1)
    }

    /// True when `m = v^(s-1)`: every tuple is used and tokens are independent.
    pub fn is_saturated(&self) -> bool {
        self.rules == self.max_rules()
    }

    /// Number of nodes at `level` (level 0 are the leaves).
    pub fn width(&self, level: usize) -> usize {
        self.branching.pow((self.depth - level) as u32)
    }

    /// Internal nodes in a subtree of height `level`: `(s^level - 1)/(s - 1)`.
    pub fn internal_nodes(&self, level: usize) -> usize {
        (self.branching.pow(level as u32) - 1) / (self.branching - 1)
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let exp = u32::try_from(exp).ok()?;
    base.checked_pow(exp)
}
