//! Exact token probabilities for a concrete grammar.
//!
//! Two independent routes: full enumeration of the generated sequences
//! (small instances) and dynamic programming along root-to-leaf paths of
//! the tree (any size). Both are pure functions of an immutable grammar.

use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Result, RhmError};
use crate::fmt::fmt_f64;
use crate::grammar::Grammar;
use crate::params::RhmParams;
use crate::tree::Sequence;
use crate::Symbol;

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_CAP: u64 = 1 << 22;

/// Probability vector of a single position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    /// 1-based position.
    pub position: usize,
    pub probs: Vec<f64>,
}

/// Joint distribution of two positions `first < second`, row-major `v × v`
/// with rows indexed by the symbol at `first`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub first: usize,
    pub second: usize,
    pub vocab: usize,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn get(&self, mu: usize, nu: usize) -> f64 {
        self.probs[mu * self.vocab + nu]
    }

    /// Marginal of the first position (sum over columns).
    pub fn first_marginal(&self) -> Vec<f64> {
        self.probs
            .chunks_exact(self.vocab)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Marginal of the second position (sum over rows).
    pub fn second_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab];
        for row in self.probs.chunks_exact(self.vocab) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }
}

/// A sequence with its probability under the grammar.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSequence {
    pub tokens: Sequence,
    pub prob: f64,
}

/// `v · m^((s^level - 1)/(s - 1))`: distinct strings spanned by a level-`level`
/// subtree over all root symbols.
pub fn subtree_string_count(params: &RhmParams, level: usize) -> BigUint {
    BigUint::from(params.vocab)
        * BigUint::from(params.rules).pow(params.internal_nodes(level) as u32)
}

fn check_cap(params: &RhmParams, level: usize, cap: u64) -> Result<usize> {
    let required = subtree_string_count(params, level);
    match required.to_u64() {
        Some(n) if n <= cap => Ok(n as usize),
        _ => Err(RhmError::CapExceeded {
            required: required.to_string(),
            cap,
        }),
    }
}

/// All strings of length `s^level` derivable from each symbol at `level`,
/// indexed by symbol. By unambiguity every string appears once.
fn expansions(grammar: &Grammar, level: usize) -> Vec<Vec<Sequence>> {
    let p = grammar.params();
    let mut table: Vec<Vec<Sequence>> = (0..p.vocab as Symbol).map(|a| vec![vec![a]]).collect();
    for l in 1..=level {
        let below = &table;
        let next: Vec<Vec<Sequence>> = (0..p.vocab as Symbol)
            .into_par_iter()
            .map(|a| {
                let mut out = Vec::new();
                for tuple in grammar.rules_of(l, a) {
                    let mut partial: Vec<Sequence> = vec![Vec::new()];
                    for &child in tuple {
                        let mut grown =
                            Vec::with_capacity(partial.len() * below[child as usize].len());
                        for prefix in &partial {
                            for tail in &below[child as usize] {
                                let mut seq = Vec::with_capacity(prefix.len() + tail.len());
                                seq.extend_from_slice(prefix);
                                seq.extend_from_slice(tail);
                                grown.push(seq);
                            }
                        }
                        partial = grown;
                    }
                    out.extend(partial);
                }
                out
            })
            .collect();
        table = next;
    }
    table
}

/// Every sequence the grammar generates with its probability
/// `1/(v·m^(#internal nodes))`. Ordered by root symbol, then by rule choices.
pub fn enumerate_sequences(grammar: &Grammar, cap: u64) -> Result<Vec<WeightedSequence>> {
    let p = grammar.params();
    let count = check_cap(p, p.depth, cap)?;
    let prob = 1.0 / count as f64;
    Ok(expansions(grammar, p.depth)
        .into_iter()
        .flatten()
        .map(|tokens| WeightedSequence { tokens, prob })
        .collect())
}

/// Enumeration dump: CSV with a quoted space-separated `seq` column and `prob`.
pub fn write_enumeration_csv<W: Write + ?Sized>(
    out: &mut W,
    seqs: &[WeightedSequence],
) -> Result<()> {
    writeln!(out, "seq,prob")?;
    for ws in seqs {
        let tokens: Vec<String> = ws.tokens.iter().map(ToString::to_string).collect();
        writeln!(out, "\"{}\",{}", tokens.join(" "), fmt_f64(ws.prob))?;
    }
    Ok(())
}

/// Single-branch rule marginals: for each level and child slot `k`, the
/// `v × v` matrix `P(child_k = c | parent = a)`.
#[derive(Debug, Clone)]
pub struct BranchMaps {
    vocab: usize,
    branching: usize,
    // maps[(ℓ-1) * s + k][a * v + c]
    maps: Vec<Vec<f64>>,
}

impl BranchMaps {
    pub fn new(grammar: &Grammar) -> Self {
        let p = grammar.params();
        let (v, s) = (p.vocab, p.branching);
        let weight = 1.0 / p.rules as f64;
        let mut maps = vec![vec![0.0; v * v]; p.depth * s];
        for level in 1..=p.depth {
            for (parent, tuple) in grammar.productions(level) {
                for (k, &child) in tuple.iter().enumerate() {
                    maps[(level - 1) * s + k][parent as usize * v + child as usize] += weight;
                }
            }
        }
        BranchMaps {
            vocab: v,
            branching: s,
            maps,
        }
    }

    fn map(&self, level: usize, slot: usize) -> &[f64] {
        &self.maps[(level - 1) * self.branching + slot]
    }

    /// Pushes a distribution over level-`level` symbols to child `slot`.
    fn push(&self, dist: &[f64], level: usize, slot: usize) -> Vec<f64> {
        let v = self.vocab;
        let m = self.map(level, slot);
        let mut out = vec![0.0; v];
        for (a, &pa) in dist.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(&m[a * v..(a + 1) * v]) {
                *o += pa * w;
            }
        }
        out
    }
}

fn slot_at(index0: usize, level: usize, s: usize) -> usize {
    (index0 / s.pow(level as u32 - 1)) % s
}

/// Distribution of the ancestor at `level` of the 0-based leaf `index0`,
/// pushed down from the uniform root.
fn ancestor_distribution(
    maps: &BranchMaps,
    params: &RhmParams,
    index0: usize,
    level: usize,
) -> Vec<f64> {
    let mut dist = vec![1.0 / params.vocab as f64; params.vocab];
    for l in ((level + 1)..=params.depth).rev() {
        dist = maps.push(&dist, l, slot_at(index0, l, params.branching));
    }
    dist
}

fn check_position(params: &RhmParams, position: usize) -> Result<usize> {
    let d = params.seq_len();
    if position < 1 || position > d {
        return Err(RhmError::OutOfRange {
            what: "position",
            value: position as u64,
            range: format!("1..={d}"),
        });
    }
    Ok(position - 1)
}

/// Marginal of a single position (1-based) by downward DP.
pub fn marginal(grammar: &Grammar, position: usize) -> Result<TokenDistribution> {
    marginal_with(&BranchMaps::new(grammar), grammar.params(), position)
}

pub fn marginal_with(
    maps: &BranchMaps,
    params: &RhmParams,
    position: usize,
) -> Result<TokenDistribution> {
    let index0 = check_position(params, position)?;
    Ok(TokenDistribution {
        position,
        probs: ancestor_distribution(maps, params, index0, 0),
    })
}

/// Joint distribution of positions `first < second` (1-based): the lowest
/// common ancestor's distribution is split into the two branch messages,
/// each pushed to its leaf.
pub fn joint(grammar: &Grammar, first: usize, second: usize) -> Result<JointDistribution> {
    joint_with(&BranchMaps::new(grammar), grammar, first, second)
}

pub fn joint_with(
    maps: &BranchMaps,
    grammar: &Grammar,
    first: usize,
    second: usize,
) -> Result<JointDistribution> {
    let p = grammar.params();
    let i0 = check_position(p, first)?;
    let j0 = check_position(p, second)?;
    if i0 >= j0 {
        return Err(RhmError::constraint(format!(
            "joint needs first < second, got {first} >= {second}"
        )));
    }
    let (v, s) = (p.vocab, p.branching);
    let mut lca = 0;
    while i0 / s.pow(lca as u32) != j0 / s.pow(lca as u32) {
        lca += 1;
    }
    let top = ancestor_distribution(maps, p, j0, lca);
    let (k1, k2) = (slot_at(i0, lca, s), slot_at(j0, lca, s));
    let weight = 1.0 / p.rules as f64;
    let mut w = vec![0.0; v * v];
    for (parent, tuple) in grammar.productions(lca) {
        w[tuple[k1] as usize * v + tuple[k2] as usize] += top[parent as usize] * weight;
    }
    for l in (1..lca).rev() {
        let m1 = maps.map(l, slot_at(i0, l, s));
        let m2 = maps.map(l, slot_at(j0, l, s));
        // tmp = W · M2, then W' = M1ᵀ · tmp
        let mut tmp = vec![0.0; v * v];
        for a in 0..v {
            for b in 0..v {
                let x = w[a * v + b];
                if x == 0.0 {
                    continue;
                }
                for c in 0..v {
                    tmp[a * v + c] += x * m2[b * v + c];
                }
            }
        }
        let mut next = vec![0.0; v * v];
        for a in 0..v {
            for c1 in 0..v {
                let y = m1[a * v + c1];
                if y == 0.0 {
                    continue;
                }
                for c2 in 0..v {
                    next[c1 * v + c2] += y * tmp[a * v + c2];
                }
            }
        }
        w = next;
    }
    Ok(JointDistribution {
        first,
        second,
        vocab: v,
        probs: w,
    })
}

/// Which level-`level` symbols derive `span` (length `s^level`); at most one
/// derivation exists per symbol, so the counts are 0 or 1.
fn inside(grammar: &Grammar, span: &[Symbol], level: usize) -> Vec<u64> {
    let p = grammar.params();
    let v = p.vocab;
    let s = p.branching;
    let mut cells: Vec<Vec<u64>> = span
        .iter()
        .map(|&x| {
            let mut cell = vec![0u64; v];
            cell[x as usize] = 1;
            cell
        })
        .collect();
    for l in 1..=level {
        cells = cells
            .chunks_exact(s)
            .map(|children| {
                let mut cell = vec![0u64; v];
                for (parent, tuple) in grammar.productions(l) {
                    let n: u64 = tuple
                        .iter()
                        .zip(children)
                        .map(|(&c, child)| child[c as usize])
                        .product();
                    cell[parent as usize] += n;
                }
                cell
            })
            .collect();
    }
    cells.pop().unwrap_or_default()
}

fn context_level(params: &RhmParams, len: usize) -> Result<usize> {
    let mut level = 0;
    let mut span = 1;
    while span - 1 < len && level < params.depth {
        span *= params.branching;
        level += 1;
    }
    if span - 1 != len {
        return Err(RhmError::constraint(format!(
            "context length {len} is not s^l - 1 for any level l <= L"
        )));
    }
    Ok(level)
}

/// Distribution of the masked last token given the `s^ℓ - 1` preceding tokens
/// of its level-`ℓ` subtree, with the subtree's top symbol drawn uniformly.
/// Every completed string then has the same probability, so the result is
/// uniform over the `N` compatible completions.
pub fn conditional_last(grammar: &Grammar, context: &[Symbol]) -> Result<TokenDistribution> {
    let p = grammar.params();
    let level = context_level(p, context.len())?;
    if let Some(&bad) = context.iter().find(|&&x| x as usize >= p.vocab) {
        return Err(RhmError::TokenOutOfRange {
            token: bad as u64,
            vocab: p.vocab,
        });
    }
    let mut span = context.to_vec();
    span.push(0);
    let mut probs = vec![0.0; p.vocab];
    for (x, prob) in probs.iter_mut().enumerate() {
        *span.last_mut().unwrap() = x as Symbol;
        if inside(grammar, &span, level).iter().any(|&n| n > 0) {
            *prob = 1.0;
        }
    }
    let n = probs.iter().filter(|&&x| x > 0.0).count();
    if n == 0 {
        return Err(RhmError::IncompatibleContext);
    }
    for x in probs.iter_mut() {
        *x /= n as f64;
    }
    Ok(TokenDistribution {
        position: p.seq_len(),
        probs,
    })
}

/// Conditional-loss summary at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLoss {
    pub level: usize,
    /// `E[ln N]` in nats.
    pub loss_nats: f64,
    /// `E[N]`.
    pub mean_n: f64,
    pub mean_n_exact: BigRational,
    /// Distinct values of `N` with the number of strings whose context has
    /// that `N` (each context with `N` completions contributes `N` strings).
    pub n_histogram: Vec<(u64, u64)>,
    /// Number of equiprobable subtree strings averaged over.
    pub total: u64,
}

impl ConditionalLoss {
    /// Checks `E[ln N] <= ln E[N]` without rounding by comparing
    /// `∏ N^(w_N) · total^total <= (Σ N·w_N)^total` in big integers, where
    /// `w_N` counts strings. Falls back to floating point for large totals.
    pub fn jensen_holds(&self) -> bool {
        if self.n_histogram.len() <= 1 {
            return true;
        }
        if self.total <= 4096 {
            let total = self.total as u32;
            let mut lhs = BigUint::from(self.total).pow(total);
            let mut sum = BigUint::zero();
            for &(n, w) in &self.n_histogram {
                lhs *= BigUint::from(n).pow(w as u32);
                sum += BigUint::from(n) * BigUint::from(w);
            }
            lhs <= sum.pow(total)
        } else {
            self.loss_nats <= self.mean_n.ln() + 1e-12
        }
    }
}

/// `E[ln N(context)]` and `E[N]` over the equiprobable strings of a
/// level-`level` subtree, where `N` counts the masked-token values compatible
/// with the other `s^level - 1` tokens. `level = 0` gives `ln v` and `v`.
pub fn exact_conditional_loss(
    grammar: &Grammar,
    level: usize,
    cap: u64,
) -> Result<ConditionalLoss> {
    let p = grammar.params();
    if level > p.depth {
        return Err(RhmError::InvalidLevel {
            level,
            depth: p.depth,
        });
    }
    if level == 0 {
        let v = p.vocab as u64;
        return Ok(ConditionalLoss {
            level,
            loss_nats: (v as f64).ln(),
            mean_n: v as f64,
            mean_n_exact: BigRational::from_integer(v.into()),
            n_histogram: vec![(v, v)],
            total: v,
        });
    }
    let total = check_cap(p, level, cap)? as u64;
    let strings = expansions(grammar, level);
    let mut groups: HashMap<&[Symbol], u64> = HashMap::new();
    for seq in strings.iter().flatten() {
        *groups.entry(&seq[..seq.len() - 1]).or_insert(0) += 1;
    }
    let mut hist: HashMap<u64, u64> = HashMap::new();
    for &n in groups.values() {
        *hist.entry(n).or_insert(0) += n;
    }
    let mut n_histogram: Vec<(u64, u64)> = hist.into_iter().collect();
    n_histogram.sort_unstable();
    let loss_nats = n_histogram
        .iter()
        .map(|&(n, w)| w as f64 * (n as f64).ln())
        .sum::<f64>()
        / total as f64;
    let sum_n: u64 = n_histogram.iter().map(|&(n, w)| n * w).sum();
    let mean_n_exact = BigRational::new(sum_n.into(), total.into());
    Ok(ConditionalLoss {
        level,
        loss_nats,
        mean_n: sum_n as f64 / total as f64,
        mean_n_exact,
        n_histogram,
        total,
    })
}

/// Loss report CSV: `ell,loss_nats,mean_N`.
pub fn write_loss_csv<W: Write + ?Sized>(out: &mut W, rows: &[ConditionalLoss]) -> Result<()> {
    writeln!(out, "ell,loss_nats,mean_N")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            r.level,
            fmt_f64(r.loss_nats),
            fmt_f64(r.mean_n)
        )?;
    }
    Ok(())
}
