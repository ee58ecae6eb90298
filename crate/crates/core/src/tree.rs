//! Derivation trees: sampling, re-derivation and subtree transformations.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Result, RhmError};
use crate::grammar::Grammar;
use crate::params::RhmParams;
use crate::rng::{self, Purpose};
use crate::Symbol;

/// An ordered list of `d = s^L` terminal symbols.
pub type Sequence = Vec<Symbol>;

/// Full generative trace of one datum.
///
/// Node `(ℓ, j)` has children `(ℓ-1, j·s + k)` for `k in 0..s`; level 0 holds
/// the leaves and level `L` the single root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationTree {
    symbols: Vec<Vec<Symbol>>,
    choices: Vec<Vec<u32>>,
}

impl DerivationTree {
    /// Expands `root` through `choices` (indexed `[ℓ-1][j]`).
    pub fn from_choices(grammar: &Grammar, root: Symbol, choices: Vec<Vec<u32>>) -> Result<Self> {
        let p = grammar.params();
        if root as usize >= p.vocab {
            return Err(RhmError::OutOfRange {
                what: "root symbol",
                value: root as u64,
                range: format!("0..{}", p.vocab),
            });
        }
        if choices.len() != p.depth
            || choices
                .iter()
                .enumerate()
                .any(|(i, c)| c.len() != p.width(i + 1))
        {
            return Err(RhmError::constraint(
                "choice table does not match the tree shape",
            ));
        }
        if let Some(&bad) = choices.iter().flatten().find(|&&r| r as usize >= p.rules) {
            return Err(RhmError::OutOfRange {
                what: "rule index",
                value: bad as u64,
                range: format!("0..{}", p.rules),
            });
        }
        let mut symbols: Vec<Vec<Symbol>> = (0..=p.depth).map(|l| vec![0; p.width(l)]).collect();
        symbols[p.depth][0] = root;
        let mut tree = DerivationTree { symbols, choices };
        tree.rederive(grammar, p.depth, 0);
        Ok(tree)
    }

    pub fn root(&self) -> Symbol {
        self.symbols[self.symbols.len() - 1][0]
    }

    pub fn leaves(&self) -> &[Symbol] {
        &self.symbols[0]
    }

    pub fn into_leaves(self) -> Sequence {
        self.symbols.into_iter().next().unwrap_or_default()
    }

    /// Symbol at node `(level, index)`; level 0 are the leaves.
    pub fn symbol(&self, level: usize, index: usize) -> Symbol {
        self.symbols[level][index]
    }

    /// All symbols at `level`.
    pub fn level(&self, level: usize) -> &[Symbol] {
        &self.symbols[level]
    }

    /// Rule index chosen at internal node `(level, index)`, `level >= 1`.
    pub fn choice(&self, level: usize, index: usize) -> u32 {
        self.choices[level - 1][index]
    }

    pub fn choices(&self) -> &[Vec<u32>] {
        &self.choices
    }

    pub fn depth(&self) -> usize {
        self.choices.len()
    }

    /// Internal nodes plus leaves.
    pub fn node_count(&self) -> usize {
        self.symbols.iter().map(Vec::len).sum()
    }

    /// Recomputes every symbol below `(level, index)` from the stored choices.
    fn rederive(&mut self, grammar: &Grammar, level: usize, index: usize) {
        let s = grammar.params().branching;
        let (mut lo, mut hi) = (index, index + 1);
        for l in (1..=level).rev() {
            for j in lo..hi {
                let parent = self.symbols[l][j];
                let rule = grammar.rule(l, parent, self.choices[l - 1][j] as usize);
                self.symbols[l - 1][j * s..(j + 1) * s].copy_from_slice(rule);
            }
            lo *= s;
            hi *= s;
        }
    }

    fn resample_below<R: Rng + ?Sized>(
        &mut self,
        grammar: &Grammar,
        level: usize,
        index: usize,
        rng: &mut R,
    ) {
        let p = grammar.params();
        let (mut lo, mut hi) = (index, index + 1);
        for l in (1..=level).rev() {
            for j in lo..hi {
                self.choices[l - 1][j] = rng.gen_range(0..p.rules) as u32;
            }
            lo *= p.branching;
            hi *= p.branching;
        }
        self.rederive(grammar, level, index);
    }
}

/// Draws derivation number `index`: root uniform over `v`, every rule choice
/// uniform over `m`. The result depends only on `(sample_seed, index)`.
pub fn sample_derivation(grammar: &Grammar, index: u64) -> DerivationTree {
    let p = grammar.params();
    let mut rng = rng::stream(p.sample_seed, Purpose::Derivation, index);
    let mut symbols: Vec<Vec<Symbol>> = (0..=p.depth).map(|l| vec![0; p.width(l)]).collect();
    let mut choices: Vec<Vec<u32>> = (1..=p.depth).map(|l| vec![0; p.width(l)]).collect();
    symbols[p.depth][0] = rng.gen_range(0..p.vocab) as Symbol;
    let s = p.branching;
    for l in (1..=p.depth).rev() {
        for j in 0..p.width(l) {
            let r = rng.gen_range(0..p.rules);
            choices[l - 1][j] = r as u32;
            let rule = grammar.rule(l, symbols[l][j], r);
            symbols[l - 1][j * s..(j + 1) * s].copy_from_slice(rule);
        }
    }
    DerivationTree { symbols, choices }
}

/// Convenience: the leaves of derivations `start..start + count`.
pub fn sample_sequences(grammar: &Grammar, start: u64, count: u64) -> Vec<Sequence> {
    (start..start + count)
        .map(|i| sample_derivation(grammar, i).into_leaves())
        .collect()
}

fn join_tokens(tokens: &[Symbol]) -> String {
    tokens
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sample dump: `index,seq` with the tokens space-separated.
pub fn write_sequences_csv<W: Write + ?Sized>(
    out: &mut W,
    start: u64,
    seqs: &[Sequence],
) -> Result<()> {
    writeln!(out, "index,seq")?;
    for (i, seq) in seqs.iter().enumerate() {
        writeln!(out, "{},\"{}\"", start + i as u64, join_tokens(seq))?;
    }
    Ok(())
}

/// Reads the `seq` column of any CSV with space-separated tokens, such as
/// the output of [`write_sequences_csv`] or an enumeration dump.
pub fn read_sequences_csv<R: Read>(input: R) -> Result<Vec<Sequence>> {
    let mut reader = csv::Reader::from_reader(input);
    let column = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == "seq")
        .ok_or_else(|| RhmError::Parse("missing seq column".into()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = record.get(column).unwrap_or("");
        let seq = field
            .split_whitespace()
            .map(|x| {
                x.parse::<Symbol>()
                    .map_err(|e| RhmError::Parse(format!("bad token {x:?}: {e}")))
            })
            .collect::<Result<Sequence>>()?;
        if let Some(first) = out.first().map(Vec::len) {
            if seq.len() != first {
                return Err(RhmError::Parse(format!(
                    "sequence {} has length {}, expected {first}",
                    out.len(),
                    seq.len()
                )));
            }
        }
        out.push(seq);
    }
    Ok(out)
}

/// Height of the lowest common ancestor of positions `d - t` and `d`,
/// i.e. the smallest `ℓ` with `s^ℓ >= t + 1`.
pub fn lca_level(distance: usize, params: &RhmParams) -> Result<usize> {
    let d = params.seq_len();
    if distance < 1 || distance >= d {
        return Err(RhmError::OutOfRange {
            what: "distance",
            value: distance as u64,
            range: format!("1..={}", d - 1),
        });
    }
    let mut level = 1;
    let mut span = params.branching;
    while span < distance + 1 {
        span *= params.branching;
        level += 1;
    }
    Ok(level)
}

/// Default node for the transformations: the penultimate node of the level,
/// so the masked last token is untouched. Level `L` has a single node, which
/// is returned instead.
pub fn default_position(params: &RhmParams, level: usize) -> usize {
    params.width(level).saturating_sub(2)
}

fn check_target(params: &RhmParams, level: usize, position: Option<usize>) -> Result<usize> {
    if level < 1 || level > params.depth {
        return Err(RhmError::InvalidLevel {
            level,
            depth: params.depth,
        });
    }
    let pos = position.unwrap_or_else(|| default_position(params, level));
    if pos >= params.width(level) {
        return Err(RhmError::OutOfRange {
            what: "node position",
            value: pos as u64,
            range: format!("0..{}", params.width(level)),
        });
    }
    Ok(pos)
}

/// Keeps the symbol at `(level, position)` and resamples every rule choice in
/// its subtree. `position` is 0-based within the level and defaults to
/// [`default_position`].
pub fn transform_reset<R: Rng + ?Sized>(
    grammar: &Grammar,
    tree: &DerivationTree,
    level: usize,
    rng: &mut R,
    position: Option<usize>,
) -> Result<DerivationTree> {
    let pos = check_target(grammar.params(), level, position)?;
    let mut out = tree.clone();
    out.resample_below(grammar, level, pos, rng);
    Ok(out)
}

/// Replaces the symbol at `(level, position)` with one of the other `v - 1`
/// symbols, uniformly, then resamples its subtree.
pub fn transform_substitute<R: Rng + ?Sized>(
    grammar: &Grammar,
    tree: &DerivationTree,
    level: usize,
    rng: &mut R,
    position: Option<usize>,
) -> Result<DerivationTree> {
    let p = grammar.params();
    let pos = check_target(p, level, position)?;
    if p.vocab < 2 {
        return Err(RhmError::constraint("v = 1 leaves no alternative symbol"));
    }
    let mut out = tree.clone();
    let old = out.symbols[level][pos];
    let mut new = rng.gen_range(0..p.vocab as Symbol - 1);
    if new >= old {
        new += 1;
    }
    out.symbols[level][pos] = new;
    out.resample_below(grammar, level, pos, rng);
    Ok(out)
}

/// Stream used by the CLI for transform number `index`.
pub fn transform_stream(seed: u64, index: u64) -> rng::Stream {
    rng::stream(seed, Purpose::Transform, index)
}
