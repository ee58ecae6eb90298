//! Random unambiguous production-rule tables.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RhmError};
use crate::params::RhmParams;
use crate::rng::{self, Purpose};
use crate::Symbol;

/// A concrete realisation of the ensemble.
///
/// For each level `1..=L` and each parent symbol the grammar stores exactly
/// `m` ordered `s`-tuples of level-`(ℓ-1)` symbols. No tuple appears twice
/// within a level, so every tuple has at most one parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    params: RhmParams,
    // levels[ℓ-1][((parent * m) + r) * s + k]
    levels: Vec<Vec<Symbol>>,
}

#[derive(Serialize, Deserialize)]
struct GrammarFile {
    #[serde(rename = "L")]
    depth: usize,
    s: usize,
    v: usize,
    m: usize,
    grammar_seed: u64,
    /// rules[level - 1][parent] = m tuples of s symbols
    rules: Vec<Vec<Vec<Vec<Symbol>>>>,
}

impl Grammar {
    /// Samples a grammar uniformly among unambiguous rule sets with exactly
    /// `m` rules per nonterminal. Per level, `v·m` distinct tuples are drawn
    /// without replacement from the `v^s` possible ones, shuffled, and split
    /// into `v` consecutive blocks of `m`.
    pub fn build(params: RhmParams) -> Result<Self> {
        params.validate()?;
        let total = params.num_tuples();
        let needed = params.vocab * params.rules;
        let s = params.branching;
        let levels = (1..=params.depth)
            .map(|level| {
                let mut rng = rng::stream(params.grammar_seed, Purpose::GrammarLevel, level as u64);
                let mut codes = index::sample(&mut rng, total, needed).into_vec();
                codes.shuffle(&mut rng);
                let mut table = Vec::with_capacity(needed * s);
                for code in codes {
                    table.extend(decode_tuple(code, params.vocab, s));
                }
                table
            })
            .collect();
        Ok(Grammar { params, levels })
    }

    pub fn params(&self) -> &RhmParams {
        &self.params
    }

    /// The `r`-th production of `parent` at `level` (1-based level).
    pub fn rule(&self, level: usize, parent: Symbol, r: usize) -> &[Symbol] {
        let s = self.params.branching;
        let start = (parent as usize * self.params.rules + r) * s;
        &self.levels[level - 1][start..start + s]
    }

    /// All `m` productions of `parent` at `level`.
    pub fn rules_of(&self, level: usize, parent: Symbol) -> impl Iterator<Item = &[Symbol]> {
        let s = self.params.branching;
        let m = self.params.rules;
        let start = parent as usize * m * s;
        self.levels[level - 1][start..start + m * s].chunks_exact(s)
    }

    /// Every `(parent, tuple)` pair at `level`.
    pub fn productions(&self, level: usize) -> impl Iterator<Item = (Symbol, &[Symbol])> {
        let m = self.params.rules;
        self.levels[level - 1]
            .chunks_exact(self.params.branching)
            .enumerate()
            .map(move |(i, tuple)| ((i / m) as Symbol, tuple))
    }

    /// Checks shape, symbol ranges and unambiguity by brute force.
    pub fn check(&self) -> Result<()> {
        self.params.validate()?;
        let p = &self.params;
        if self.levels.len() != p.depth {
            return Err(RhmError::InvalidGrammar(format!(
                "expected {} levels, found {}",
                p.depth,
                self.levels.len()
            )));
        }
        for (i, table) in self.levels.iter().enumerate() {
            let level = i + 1;
            if table.len() != p.vocab * p.rules * p.branching {
                return Err(RhmError::InvalidGrammar(format!(
                    "level {level}: wrong number of rule entries"
                )));
            }
            if let Some(&bad) = table.iter().find(|&&x| x as usize >= p.vocab) {
                return Err(RhmError::InvalidGrammar(format!(
                    "level {level}: symbol {bad} >= v = {}",
                    p.vocab
                )));
            }
            let mut seen = HashSet::with_capacity(p.vocab * p.rules);
            for tuple in table.chunks_exact(p.branching) {
                if !seen.insert(tuple) {
                    return Err(RhmError::InvalidGrammar(format!(
                        "level {level}: tuple {tuple:?} produced more than once (ambiguous)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let p = &self.params;
        let rules = (1..=p.depth)
            .map(|level| {
                (0..p.vocab as Symbol)
                    .map(|parent| {
                        self.rules_of(level, parent)
                            .map(<[Symbol]>::to_vec)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let file = GrammarFile {
            depth: p.depth,
            s: p.branching,
            v: p.vocab,
            m: p.rules,
            grammar_seed: p.grammar_seed,
            rules,
        };
        let mut out = serde_json::to_string(&file).expect("grammar serializes");
        out.push('\n');
        out
    }

    /// Parses and validates a grammar document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GrammarFile = serde_json::from_str(text)?;
        let params = RhmParams {
            depth: file.depth,
            branching: file.s,
            vocab: file.v,
            rules: file.m,
            grammar_seed: file.grammar_seed,
            sample_seed: 0,
        };
        params.validate()?;
        if file.rules.len() != params.depth {
            return Err(RhmError::InvalidGrammar(format!(
                "expected {} levels of rules, found {}",
                params.depth,
                file.rules.len()
            )));
        }
        let mut levels = Vec::with_capacity(params.depth);
        for (i, parents) in file.rules.into_iter().enumerate() {
            if parents.len() != params.vocab {
                return Err(RhmError::InvalidGrammar(format!(
                    "level {}: expected {} parents, found {}",
                    i + 1,
                    params.vocab,
                    parents.len()
                )));
            }
            let mut table = Vec::with_capacity(params.vocab * params.rules * params.branching);
            for (parent, tuples) in parents.into_iter().enumerate() {
                if tuples.len() != params.rules {
                    return Err(RhmError::InvalidGrammar(format!(
                        "level {}, parent {parent}: expected {} rules, found {}",
                        i + 1,
                        params.rules,
                        tuples.len()
                    )));
                }
                for tuple in tuples {
                    if tuple.len() != params.branching {
                        return Err(RhmError::InvalidGrammar(format!(
                            "level {}, parent {parent}: tuple of length {} (s = {})",
                            i + 1,
                            tuple.len(),
                            params.branching
                        )));
                    }
                    table.extend(tuple);
                }
            }
            levels.push(table);
        }
        let grammar = Grammar { params, levels };
        grammar.check()?;
        Ok(grammar)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Replaces the sample seed carried in the parameters.
    pub fn with_sample_seed(mut self, seed: u64) -> Self {
        self.params.sample_seed = seed;
        self
    }
}

fn decode_tuple(mut code: usize, vocab: usize, len: usize) -> Vec<Symbol> {
    let mut tuple = vec![0; len];
    for slot in tuple.iter_mut().rev() {
        *slot = (code % vocab) as Symbol;
        code /= vocab;
    }
    tuple
}
