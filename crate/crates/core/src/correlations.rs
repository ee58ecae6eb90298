//! Token-correlation curves: analytic plateaus, exact curves from a grammar,
//! plug-in estimates from samples, and the effective context window.
//!
//! `C̃(t)` is the root mean square, over all `v²` vocabulary pairs, of the
//! covariance `P(x_{d-t}=μ, x_d=ν) - P(x_{d-t}=μ)·P(x_d=ν)`. With this
//! normalisation the ensemble plateaus are `v^(-3/2)·m^(1/2-ℓ)` and `P`
//! samples leave a noise floor of `(v²P)^(-1/2)`.

use std::io::{BufRead, Write};
use std::ops::Range;

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::error::{Result, RhmError};
use crate::exact::{self, BranchMaps};
use crate::fmt::fmt_f64;
use crate::grammar::Grammar;
use crate::params::RhmParams;
use crate::theory;
use crate::tree::{lca_level, Sequence};
use crate::Symbol;

/// Upper bound on `(d - 1)·L·v³` for [`exact_corr_curve`].
pub const DP_CAP: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    Analytic,
    Exact,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrEntry {
    pub t: usize,
    pub value: f64,
    pub noise_floor: Option<f64>,
}

/// Distance-indexed correlation values.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrCurve {
    pub entries: Vec<CorrEntry>,
    pub source: CurveSource,
    /// Number of samples behind an empirical curve.
    pub samples: Option<u64>,
    /// Parameter set or corpus id the curve was computed for.
    pub label: String,
}

impl CorrCurve {
    pub fn value(&self, t: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.t == t).map(|e| e.value)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn check(&self) -> Result<()> {
        for pair in self.entries.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(RhmError::constraint(
                    "curve distances must be strictly increasing",
                ));
            }
        }
        if self
            .entries
            .iter()
            .any(|e| e.value.is_nan() || e.value < 0.0)
        {
            return Err(RhmError::constraint("curve values must be non-negative"));
        }
        Ok(())
    }

    /// CSV with header `t,value,noise_floor`; the floor is empty when absent.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,value,noise_floor")?;
        for e in &self.entries {
            let floor = e.noise_floor.map(fmt_f64).unwrap_or_default();
            writeln!(out, "{},{},{}", e.t, fmt_f64(e.value), floor)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: BufRead>(input: R, label: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        let mut any_floor = false;
        for record in reader.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
            let t = field(0)
                .parse::<usize>()
                .map_err(|e| RhmError::Parse(format!("bad distance {:?}: {e}", field(0))))?;
            let value = field(1)
                .parse::<f64>()
                .map_err(|e| RhmError::Parse(format!("bad value {:?}: {e}", field(1))))?;
            let floor = field(2);
            let noise_floor = if floor.is_empty() {
                None
            } else {
                any_floor = true;
                Some(
                    floor
                        .parse::<f64>()
                        .map_err(|e| RhmError::Parse(format!("bad noise floor {floor:?}: {e}")))?,
                )
            };
            entries.push(CorrEntry {
                t,
                value,
                noise_floor,
            });
        }
        let curve = CorrCurve {
            entries,
            source: if any_floor {
                CurveSource::Empirical
            } else {
                CurveSource::Exact
            },
            samples: None,
            label: label.to_string(),
        };
        curve.check()?;
        Ok(curve)
    }
}

/// Sampling-noise floor `(v²P)^(-1/2)`.
pub fn noise_floor(vocab: usize, samples: u64) -> f64 {
    1.0 / (vocab as f64 * (samples as f64).sqrt())
}

/// RMS over `(μ, ν)` of `joint(μ, ν) - first(μ)·second(ν)`.
pub fn rms_covariance(joint: &[f64], first: &[f64], second: &[f64]) -> f64 {
    let v = first.len();
    let mut acc = 0.0;
    for (mu, pm) in first.iter().enumerate() {
        for (nu, pn) in second.iter().enumerate() {
            let c = joint[mu * v + nu] - pm * pn;
            acc += c * c;
        }
    }
    (acc / (v * v) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauRow {
    pub level: usize,
    /// Token-token plateau `v^(-3/2)·m^(1/2-ℓ)`.
    pub plateau: f64,
    /// Tuple-token plateau, `plateau / √m`.
    pub tuple_plateau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateaus {
    pub rows: Vec<PlateauRow>,
    /// Set when `m = v^(s-1)`: tokens are independent and every plateau is exactly 0.
    pub uncorrelated: bool,
}

/// Ensemble plateau values for `ℓ = 1..=L`.
pub fn analytic_plateaus(params: &RhmParams) -> Plateaus {
    let uncorrelated = params.is_saturated();
    let v = params.vocab as f64;
    let m = params.rules as f64;
    let rows = (1..=params.depth)
        .map(|level| {
            if uncorrelated {
                return PlateauRow {
                    level,
                    plateau: 0.0,
                    tuple_plateau: 0.0,
                };
            }
            let scale = v.powi(3) * m.powi(2 * level as i32);
            PlateauRow {
                level,
                plateau: (m / scale).sqrt(),
                tuple_plateau: scale.recip().sqrt(),
            }
        })
        .collect();
    Plateaus { rows, uncorrelated }
}

/// The analytic staircase evaluated at every distance `1..d`.
pub fn analytic_corr_curve(params: &RhmParams) -> CorrCurve {
    let plateaus = analytic_plateaus(params);
    let entries = (1..params.seq_len())
        .map(|t| {
            let level = lca_level(t, params).expect("t in range");
            CorrEntry {
                t,
                value: plateaus.rows[level - 1].plateau,
                noise_floor: None,
            }
        })
        .collect();
    CorrCurve {
        entries,
        source: CurveSource::Analytic,
        samples: None,
        label: params_label(params),
    }
}

pub(crate) fn params_label(p: &RhmParams) -> String {
    format!(
        "L={} s={} v={} m={}",
        p.depth, p.branching, p.vocab, p.rules
    )
}

/// Exact `C̃(t)` for `t = 1..d-1` from the DP joint and marginal probabilities.
pub fn exact_corr_curve(grammar: &Grammar) -> Result<CorrCurve> {
    let p = grammar.params();
    let d = p.seq_len();
    let work = BigUint::from(d as u64 - 1) * BigUint::from(p.depth) * BigUint::from(p.vocab).pow(3);
    if work > BigUint::from(DP_CAP) {
        return Err(RhmError::CapExceeded {
            required: work.to_string(),
            cap: DP_CAP,
        });
    }
    let maps = BranchMaps::new(grammar);
    let last = exact::marginal_with(&maps, p, d)?;
    let entries = (1..d)
        .into_par_iter()
        .map(|t| {
            let joint = exact::joint_with(&maps, grammar, d - t, d)?;
            let first = exact::marginal_with(&maps, p, d - t)?;
            Ok(CorrEntry {
                t,
                value: rms_covariance(&joint.probs, &first.probs, &last.probs),
                noise_floor: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrCurve {
        entries,
        source: CurveSource::Exact,
        samples: None,
        label: format!("{} grammar_seed={}", params_label(p), p.grammar_seed),
    })
}

/// Mean of the exact curves of the grammars built with `seeds`.
pub fn ensemble_exact_curve(params: &RhmParams, seeds: Range<u64>) -> Result<CorrCurve> {
    let n = seeds.end.saturating_sub(seeds.start);
    if n == 0 {
        return Err(RhmError::EmptyInput("no grammar seeds".into()));
    }
    let curves = seeds
        .clone()
        .into_par_iter()
        .map(|seed| exact_corr_curve(&Grammar::build(params.with_grammar_seed(seed))?))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = curves[0].entries.clone();
    for e in entries.iter_mut() {
        e.value = 0.0;
    }
    for curve in &curves {
        for (acc, e) in entries.iter_mut().zip(&curve.entries) {
            acc.value += e.value;
        }
    }
    for e in entries.iter_mut() {
        e.value /= n as f64;
    }
    Ok(CorrCurve {
        entries,
        source: CurveSource::Exact,
        samples: None,
        label: format!(
            "{} grammar_seeds={}..{}",
            params_label(params),
            seeds.start,
            seeds.end
        ),
    })
}

/// Mergeable co-occurrence counts between every position and the last one.
///
/// Memory is `(d - 1)·v²` counters regardless of the number of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    len: usize,
    vocab: usize,
    samples: u64,
    // counts[(t - 1) * v² + μ * v + ν] for x_{d-t} = μ, x_d = ν
    counts: Vec<u64>,
}

impl CooccurrenceCounts {
    pub fn new(len: usize, vocab: usize) -> Self {
        CooccurrenceCounts {
            len,
            vocab,
            samples: 0,
            counts: vec![0; len.saturating_sub(1) * vocab * vocab],
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn push(&mut self, seq: &[Symbol]) -> Result<()> {
        if seq.len() != self.len {
            return Err(RhmError::constraint(format!(
                "sequence of length {} where {} expected",
                seq.len(),
                self.len
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&x| x as usize >= self.vocab) {
            return Err(RhmError::TokenOutOfRange {
                token: bad as u64,
                vocab: self.vocab,
            });
        }
        self.push_unchecked(seq);
        Ok(())
    }

    /// Caller guarantees the length and token range.
    pub(crate) fn push_unchecked(&mut self, seq: &[Symbol]) {
        let v = self.vocab;
        let d = self.len;
        let last = seq[d - 1] as usize;
        let block = v * v;
        for t in 1..d {
            self.counts[(t - 1) * block + seq[d - 1 - t] as usize * v + last] += 1;
        }
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &CooccurrenceCounts) {
        assert_eq!(
            (self.len, self.vocab),
            (other.len, other.vocab),
            "incompatible counters"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.samples += other.samples;
    }

    /// Plug-in estimate `Ĉ_P(t)` with the `(v²P)^(-1/2)` floor on every row.
    pub fn curve(&self, label: &str) -> Result<CorrCurve> {
        if self.samples < 2 {
            return Err(RhmError::EmptyInput(format!(
                "need at least 2 samples, have {}",
                self.samples
            )));
        }
        let v = self.vocab;
        let p = self.samples as f64;
        let floor = noise_floor(v, self.samples);
        let entries = self
            .counts
            .chunks_exact(v * v)
            .enumerate()
            .map(|(i, block)| {
                let joint: Vec<f64> = block.iter().map(|&c| c as f64 / p).collect();
                let mut first = vec![0.0; v];
                let mut second = vec![0.0; v];
                for mu in 0..v {
                    for nu in 0..v {
                        first[mu] += joint[mu * v + nu];
                        second[nu] += joint[mu * v + nu];
                    }
                }
                CorrEntry {
                    t: i + 1,
                    value: rms_covariance(&joint, &first, &second),
                    noise_floor: Some(floor),
                }
            })
            .collect();
        Ok(CorrCurve {
            entries,
            source: CurveSource::Empirical,
            samples: Some(self.samples),
            label: label.to_string(),
        })
    }
}

const CHUNK: usize = 4096;

/// Counts a batch of equal-length sequences, in parallel chunks merged by
/// addition (the result does not depend on the thread count).
pub fn count_sequences<S: AsRef<[Symbol]> + Sync>(
    samples: &[S],
    vocab: usize,
) -> Result<CooccurrenceCounts> {
    let Some(first) = samples.first() else {
        return Err(RhmError::EmptyInput("no sequences".into()));
    };
    let len = first.as_ref().len();
    if len < 2 {
        return Err(RhmError::constraint("sequences need at least 2 tokens"));
    }
    samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut counts = CooccurrenceCounts::new(len, vocab);
            for seq in chunk {
                counts.push(seq.as_ref())?;
            }
            Ok(counts)
        })
        .try_reduce(
            || CooccurrenceCounts::new(len, vocab),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )
}

/// Plug-in `Ĉ_P(t)` from `P >= 2` sequences over a vocabulary of size `v`.
pub fn empirical_corr_curve(samples: &[Sequence], vocab: usize) -> Result<CorrCurve> {
    count_sequences(samples, vocab)?.curve(&format!("samples v={vocab}"))
}

/// Effective window: `ℓ*` is the deepest level whose plateau exceeds the
/// noise floor, `t* = s^ℓ* - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveWindow {
    pub level: usize,
    pub distance: usize,
}

/// `ℓ* = max{ℓ <= L : C̃^(ℓ) > (v²P)^(-1/2)}`, with `ℓ = 0` always admitted.
///
/// The comparison squares both sides and reduces to `P > v·m^(2ℓ-1) = P_ℓ`,
/// evaluated exactly, so a floor equal to a plateau leaves it unresolved.
pub fn effective_window(params: &RhmParams, samples: u64) -> EffectiveWindow {
    let mut level = 0;
    if !params.is_saturated() {
        let p = BigUint::from(samples);
        while level < params.depth && p > theory::sample_complexity_exact(params, level + 1) {
            level += 1;
        }
    }
    EffectiveWindow {
        level,
        distance: params.branching.pow(level as u32) - 1,
    }
}

/// Decay exponent of the staircase, `ln m / ln s`.
pub fn beta_exponent(params: &RhmParams) -> f64 {
    (params.rules as f64).ln() / (params.branching as f64).ln()
}
