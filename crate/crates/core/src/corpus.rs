//! Character-level corpora: correlation curves from sampled blocks,
//! power-law fits, effective windows, and loss-table rescaling.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::correlations::{CooccurrenceCounts, CorrCurve};
use crate::error::{Result, RhmError};
use crate::fmt::fmt_f64;
use crate::rng::{self, Purpose};
use crate::Symbol;

/// False for NaN.
fn positive(x: f64) -> bool {
    x > 0.0
}

pub const DEFAULT_ALPHABET_CAP: usize = 256;

/// Text mapped to contiguous integer tokens in order of first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub tokens: Vec<Symbol>,
    pub alphabet: Vec<char>,
}

impl Corpus {
    pub fn from_text(text: &str, alphabet_cap: usize) -> Result<Self> {
        if text.is_empty() {
            return Err(RhmError::EmptyInput("corpus has no characters".into()));
        }
        let mut index: HashMap<char, Symbol> = HashMap::new();
        let mut alphabet = Vec::new();
        let mut tokens = Vec::with_capacity(text.len());
        for c in text.chars() {
            let id = match index.get(&c) {
                Some(&id) => id,
                None => {
                    if alphabet.len() == alphabet_cap {
                        return Err(RhmError::AlphabetOverflow { cap: alphabet_cap });
                    }
                    let id = alphabet.len() as Symbol;
                    index.insert(c, id);
                    alphabet.push(c);
                    id
                }
            };
            tokens.push(id);
        }
        Ok(Corpus { tokens, alphabet })
    }

    /// Wraps an already tokenised sequence with an implicit alphabet.
    pub fn from_tokens(tokens: Vec<Symbol>, vocab: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(RhmError::EmptyInput("corpus has no tokens".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&x| x as usize >= vocab) {
            return Err(RhmError::TokenOutOfRange {
                token: bad as u64,
                vocab,
            });
        }
        let alphabet = (0..vocab as u32)
            .map(|i| char::from_u32(0xE000 + i).expect("private-use code point"))
            .collect();
        Ok(Corpus { tokens, alphabet })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.alphabet.len()
    }
}

/// Reads a UTF-8 text file as a character-level corpus.
pub fn load_corpus(path: impl AsRef<Path>, alphabet_cap: usize) -> Result<Corpus> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Corpus::from_text(&text, alphabet_cap)
}

/// How block start offsets are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSampling {
    /// `P` offsets drawn uniformly with replacement; offset `k` depends only
    /// on `(seed, k)`.
    Random { blocks: u64, seed: u64 },
    /// Every offset once (stride 1).
    Exhaustive,
}

const BLOCK_CHUNK: u64 = 8192;

/// `Ĉ_P(t)` for `t = 1..block_len-1` from blocks of `block_len` consecutive
/// tokens, each block's last token playing the masked position.
pub fn corpus_corr_curve(
    corpus: &Corpus,
    block_len: usize,
    sampling: BlockSampling,
) -> Result<CorrCurve> {
    if block_len < 2 {
        return Err(RhmError::constraint("block length must be at least 2"));
    }
    if block_len > corpus.len() {
        return Err(RhmError::constraint(format!(
            "block length {block_len} exceeds corpus length {}",
            corpus.len()
        )));
    }
    let starts = (corpus.len() - block_len + 1) as u64;
    let (blocks, label) = match sampling {
        BlockSampling::Random { blocks, seed } => (
            blocks,
            format!("corpus d={block_len} P={blocks} seed={seed}"),
        ),
        BlockSampling::Exhaustive => (starts, format!("corpus d={block_len} exhaustive")),
    };
    if blocks < 2 {
        return Err(RhmError::EmptyInput(format!(
            "need at least 2 blocks, have {blocks}"
        )));
    }
    let v = corpus.vocab();
    let chunks = blocks.div_ceil(BLOCK_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = CooccurrenceCounts::new(block_len, v);
            for k in c * BLOCK_CHUNK..((c + 1) * BLOCK_CHUNK).min(blocks) {
                let start = match sampling {
                    BlockSampling::Random { seed, .. } => {
                        rng::stream(seed, Purpose::Blocks, k).gen_range(0..starts)
                    }
                    BlockSampling::Exhaustive => k,
                } as usize;
                counts.push_unchecked(&corpus.tokens[start..start + block_len]);
            }
            counts
        })
        .reduce(
            || CooccurrenceCounts::new(block_len, v),
            |mut a, b| {
                a.merge(&b);
                a
            },
        );
    counts.curve(&label)
}

/// Least-squares power law `value ≈ a·t^(-β)` in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub beta: f64,
    pub amplitude: f64,
    /// Distances actually used.
    pub t_min: usize,
    pub t_max: usize,
    pub points: usize,
    /// RMS residual of `ln value` about the fitted line.
    pub residual: f64,
    /// `z = 2β`.
    pub z: f64,
}

pub const DEFAULT_FIT_WINDOW: (usize, usize) = (2, 64);
pub const DEFAULT_FIT_MARGIN: f64 = 2.0;

/// Fits `ln value = ln a - β ln t` over `[t_min, t_max]`.
///
/// The window is cut at the first distance whose value is not above
/// `margin × noise_floor`: past that point the curve is saturated. Curves
/// without a noise floor only drop non-positive values.
pub fn fit_powerlaw(
    curve: &CorrCurve,
    t_min: usize,
    t_max: usize,
    margin: f64,
) -> Result<PowerLawFit> {
    let mut points = Vec::new();
    for e in curve
        .entries
        .iter()
        .filter(|e| e.t >= t_min && e.t <= t_max)
    {
        let resolved = match e.noise_floor {
            Some(floor) => e.value > margin * floor,
            None => e.value > 0.0,
        };
        if !resolved {
            break;
        }
        points.push(((e.t as f64).ln(), e.value.ln(), e.t));
    }
    if points.len() < 3 {
        return Err(RhmError::InsufficientPoints {
            found: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        beta: -slope,
        amplitude: intercept.exp(),
        t_min: points[0].2,
        t_max: points[points.len() - 1].2,
        points: points.len(),
        residual,
        z: -2.0 * slope,
    })
}

impl PowerLawFit {
    /// CSV with header `beta,amplitude,t_min,t_max,points,residual,z`.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "beta,amplitude,t_min,t_max,points,residual,z")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(self.beta),
            fmt_f64(self.amplitude),
            self.t_min,
            self.t_max,
            self.points,
            fmt_f64(self.residual),
            fmt_f64(self.z)
        )?;
        Ok(())
    }
}

/// Distance where the fitted power law meets the noise floor:
/// `a·t^(-β) = (v²P)^(-1/2)`, i.e. `t* = (a·v·√P)^(1/β)`.
pub fn corpus_effective_window(fit: &PowerLawFit, samples: f64, vocab: usize) -> Result<f64> {
    if !positive(fit.beta) {
        return Err(RhmError::constraint(format!(
            "effective window needs beta > 0, got {}",
            fit.beta
        )));
    }
    Ok((fit.amplitude * vocab as f64 * samples.sqrt()).powf(1.0 / fit.beta))
}

/// Characteristic training-set size for a context of `t` tokens: the inverse
/// of [`corpus_effective_window`], `P*(t) = (t^β / (a·v))²`.
pub fn characteristic_size(fit: &PowerLawFit, t: f64, vocab: usize) -> Result<f64> {
    if !positive(fit.beta) {
        return Err(RhmError::constraint(format!(
            "characteristic size needs beta > 0, got {}",
            fit.beta
        )));
    }
    Ok((t.powf(fit.beta) / (fit.amplitude * vocab as f64)).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct LossRow {
    #[serde(rename = "P")]
    pub samples: f64,
    pub t: f64,
    pub loss: f64,
}

/// Externally produced test losses indexed by training-set size and context length.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
}

impl LossTable {
    pub fn new(rows: Vec<LossRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !positive(r.samples) || !positive(r.t) {
                return Err(RhmError::constraint(format!(
                    "P and t must be positive, got P={} t={}",
                    r.samples, r.t
                )));
            }
            if !seen.insert((r.samples.to_bits(), r.t.to_bits())) {
                return Err(RhmError::constraint(format!(
                    "duplicate row for P={} t={}",
                    r.samples, r.t
                )));
            }
        }
        Ok(LossTable { rows })
    }

    /// Reads CSV with header `P,t,loss`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<LossRow>, _>>()?;
        Self::new(rows)
    }
}

/// One rescaled row: `x = P/t^z`, `y1 = loss·P^α`, `y2 = loss·t^(αz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapsedRow {
    pub samples: f64,
    pub t: f64,
    pub loss: f64,
    pub x: f64,
    pub y1: f64,
    pub y2: f64,
}

/// Rescales every row for the context-dependent scaling collapse.
pub fn collapse_rescale(table: &LossTable, alpha: f64, z: f64) -> Result<Vec<CollapsedRow>> {
    if (alpha.is_nan() || alpha < 0.0) || !positive(z) {
        return Err(RhmError::constraint(format!(
            "collapse needs alpha >= 0 and z > 0, got alpha={alpha} z={z}"
        )));
    }
    table
        .rows
        .iter()
        .map(|r| {
            if !positive(r.samples) || !positive(r.t) {
                return Err(RhmError::constraint("P and t must be positive"));
            }
            Ok(CollapsedRow {
                samples: r.samples,
                t: r.t,
                loss: r.loss,
                x: r.samples / r.t.powf(z),
                y1: r.loss * r.samples.powf(alpha),
                y2: r.loss * r.t.powf(alpha * z),
            })
        })
        .collect()
}

/// CSV with header `P,t,loss,x,y1,y2`.
pub fn write_collapse_csv<W: Write + ?Sized>(out: &mut W, rows: &[CollapsedRow]) -> Result<()> {
    writeln!(out, "P,t,loss,x,y1,y2")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.samples),
            fmt_f64(r.t),
            fmt_f64(r.loss),
            fmt_f64(r.x),
            fmt_f64(r.y1),
            fmt_f64(r.y2)
        )?;
    }
    Ok(())
}

/// Least-squares `α` from `ln loss = c - α ln P` over rows with
/// `P/t^z <= x_max`, where the context is long enough that the loss follows
/// the plain `P^(-α)` law.
pub fn fit_alpha(table: &LossTable, z: f64, x_max: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.samples / r.t.powf(z) <= x_max && r.loss > 0.0)
        .map(|r| (r.samples.ln(), r.loss.ln()))
        .collect();
    let n = pts.len();
    let distinct: HashSet<u64> = pts.iter().map(|p| p.0.to_bits()).collect();
    if n < 3 || distinct.len() < 2 {
        return Err(RhmError::InsufficientPoints { found: n });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::{CorrEntry, CurveSource};

    fn curve(values: impl Iterator<Item = (usize, f64)>, floor: Option<f64>) -> CorrCurve {
        CorrCurve {
            entries: values
                .map(|(t, value)| CorrEntry {
                    t,
                    value,
                    noise_floor: floor,
                })
                .collect(),
            source: CurveSource::Empirical,
            samples: None,
            label: "test".into(),
        }
    }

    #[test]
    fn tokenizes_in_first_occurrence_order() {
        let c = Corpus::from_text("abab", 256).unwrap();
        assert_eq!(c.alphabet, vec!['a', 'b']);
        assert_eq!(c.tokens, vec![0, 1, 0, 1]);
        let c = Corpus::from_text("ba\u{e9}a", 256).unwrap();
        assert_eq!(c.alphabet, vec!['b', 'a', '\u{e9}']);
        assert_eq!(c.tokens, vec![0, 1, 2, 1]);
    }

    #[test]
    fn corpus_errors() {
        assert!(matches!(
            Corpus::from_text("", 256),
            Err(RhmError::EmptyInput(_))
        ));
        assert!(matches!(
            Corpus::from_text("abc", 2),
            Err(RhmError::AlphabetOverflow { cap: 2 })
        ));
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        assert!(load_corpus(&empty, 256).is_err());
        assert!(matches!(
            load_corpus(dir.path().join("missing.txt"), 256),
            Err(RhmError::Io(_))
        ));
    }

    #[test]
    fn block_longer_than_corpus() {
        let c = Corpus::from_text("abcabc", 256).unwrap();
        assert!(corpus_corr_curve(&c, 7, BlockSampling::Exhaustive).is_err());
        assert!(corpus_corr_curve(&c, 6, BlockSampling::Random { blocks: 4, seed: 0 }).is_ok());
    }

    #[test]
    fn exact_power_law_fit() {
        let c = curve((1..=100).map(|t| (t, (t as f64).powf(-1.4))), None);
        let fit = fit_powerlaw(&c, 2, 64, 2.0).unwrap();
        assert!((fit.beta - 1.4).abs() < 1e-10);
        assert!((fit.amplitude - 1.0).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.z, 2.0 * fit.beta);
        assert_eq!((fit.t_min, fit.t_max, fit.points), (2, 64, 63));
    }

    #[test]
    fn saturated_tail_is_trimmed() {
        // 2·floor sits between 30^-1.4 and 31^-1.4
        let floor = 0.5 * (30f64.powf(-1.4) + 31f64.powf(-1.4)) / 2.0;
        let c = curve(
            (1..=100).map(|t| (t, (t as f64).powf(-1.4).max(floor))),
            Some(floor),
        );
        let fit = fit_powerlaw(&c, 2, 64, 2.0).unwrap();
        assert_eq!(fit.t_max, 30);
        assert!((fit.beta - 1.4).abs() < 1e-10);
    }

    #[test]
    fn fit_needs_three_points() {
        let c = curve((1..=10).map(|t| (t, 1.0 / t as f64)), Some(0.2));
        assert!(matches!(
            fit_powerlaw(&c, 2, 64, 2.0),
            Err(RhmError::InsufficientPoints { found: 1 })
        ));
    }

    #[test]
    fn window_closed_form_and_scaling() {
        let fit = PowerLawFit {
            beta: 1.0,
            amplitude: 1.0,
            t_min: 2,
            t_max: 64,
            points: 10,
            residual: 0.0,
            z: 2.0,
        };
        assert!((corpus_effective_window(&fit, 1e4, 1).unwrap() - 100.0).abs() < 1e-9);
        let fit = PowerLawFit {
            beta: 1.4,
            amplitude: 0.3,
            z: 2.8,
            ..fit
        };
        let a = corpus_effective_window(&fit, 1e5, 65).unwrap();
        let b = corpus_effective_window(&fit, 2e5, 65).unwrap();
        assert!((b / a - 2f64.powf(1.0 / 2.8)).abs() < 1e-12);
        let back = characteristic_size(&fit, a, 65).unwrap();
        assert!((back / 1e5 - 1.0).abs() < 1e-10);
        let flat = PowerLawFit { beta: 0.0, ..fit };
        assert!(corpus_effective_window(&flat, 1e5, 65).is_err());
    }

    #[test]
    fn collapse_basics() {
        let table = LossTable::read_csv("P,t,loss\n100,4,2.5\n1000,8,1.5\n".as_bytes()).unwrap();
        let same = collapse_rescale(&table, 0.0, 2.8).unwrap();
        for (r, row) in same.iter().zip(&table.rows) {
            assert_eq!(r.y1, row.loss);
            assert_eq!(r.y2, row.loss);
        }
        assert!(collapse_rescale(&table, 0.3, 0.0).is_err());
        assert!(LossTable::read_csv("P,t,loss\n0,4,2.5\n".as_bytes()).is_err());
        assert!(LossTable::read_csv("P,t,loss\n10,4,2.5\n10,4,2.0\n".as_bytes()).is_err());
    }

    #[test]
    fn alpha_recovered_from_small_x_branch() {
        let (alpha, z) = (0.3, 2.8);
        let g = |x: f64| (1.0 + x).powf(alpha);
        let mut rows = Vec::new();
        for t in [4.0, 64.0, 256.0, 1024.0] {
            for k in 0..12 {
                let p = 10f64.powf(1.0 + 0.5 * k as f64);
                rows.push(LossRow {
                    samples: p,
                    t,
                    loss: p.powf(-alpha) * g(p / f64::powf(t, z)),
                });
            }
        }
        let table = LossTable::new(rows).unwrap();
        let fitted = fit_alpha(&table, z, 1e-3).unwrap();
        assert!((fitted - alpha).abs() < 1e-3, "{fitted}");
    }

    #[test]
    fn null_corpus_sits_on_the_floor() {
        let mut r = rng::stream(11, Purpose::Synthetic, 0);
        let tokens: Vec<Symbol> = (0..200_000).map(|_| r.gen_range(0..8)).collect();
        let c = Corpus::from_tokens(tokens, 8).unwrap();
        for blocks in [1_000, 10_000] {
            let curve =
                corpus_corr_curve(&c, 33, BlockSampling::Random { blocks, seed: 3 }).unwrap();
            for e in &curve.entries {
                let ratio = e.value / e.noise_floor.unwrap();
                assert!(
                    (0.3..=3.0).contains(&ratio),
                    "P={blocks} t={}: {ratio}",
                    e.t
                );
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = Corpus::from_text(
            &"to be or not to be, that is the question\n".repeat(50),
            256,
        )
        .unwrap();
        let run = |seed| {
            corpus_corr_curve(&c, 17, BlockSampling::Random { blocks: 500, seed })
                .unwrap()
                .to_csv_string()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn bundled_shakespeare() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/tiny_shakespeare.txt"
        );
        let c = load_corpus(path, DEFAULT_ALPHABET_CAP).unwrap();
        assert!(c.len() > 1_000_000);
        let curve = corpus_corr_curve(
            &c,
            129,
            BlockSampling::Random {
                blocks: 1_000_000,
                seed: 0,
            },
        )
        .unwrap();
        let fit = fit_powerlaw(
            &curve,
            DEFAULT_FIT_WINDOW.0,
            DEFAULT_FIT_WINDOW.1,
            DEFAULT_FIT_MARGIN,
        )
        .unwrap();
        let ratio = corpus_effective_window(&fit, 1e6, c.vocab()).unwrap()
            / corpus_effective_window(&fit, 1e5, c.vocab()).unwrap();
        assert!((ratio / 10f64.powf(1.0 / fit.z) - 1.0).abs() < 0.01);
    }
}
