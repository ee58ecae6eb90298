//! Closed-form predictions in exact rational arithmetic.

use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

use crate::correlations::analytic_plateaus;
use crate::error::{Result, RhmError};
use crate::fmt::fmt_f64;
use crate::params::RhmParams;

fn int(x: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// A value in exact and floating-point form.
#[derive(Debug, Clone, PartialEq)]
pub struct Exact {
    pub exact: BigRational,
    pub value: f64,
}

impl From<BigRational> for Exact {
    fn from(exact: BigRational) -> Self {
        let value = to_f64(&exact);
        Exact { exact, value }
    }
}

/// Fraction `f = (m·v - 1)/(v^s - 1)` of the other tuples that are produced
/// by some rule.
pub fn compatible_fraction(params: &RhmParams) -> Exact {
    BigRational::new(
        BigInt::from(params.rules * params.vocab - 1),
        BigInt::from(params.num_tuples() - 1),
    )
    .into()
}

/// Mean number of masked-token values compatible with a context of size
/// `s^ℓ - 1`: `N̄₀ = v`, `N̄_ℓ = 1 + (v-1)(m·N̄_{ℓ-1} - 1)/(v^s - 1)`.
pub fn nbar(params: &RhmParams, level: usize) -> Exact {
    nbar_sequence(params, level)
        .pop()
        .expect("non-empty")
        .into()
}

fn nbar_sequence(params: &RhmParams, level: usize) -> Vec<BigRational> {
    let one = BigRational::one();
    let v = int(params.vocab);
    let m = int(params.rules);
    let denom = int(params.num_tuples() - 1);
    let mut out = vec![v.clone()];
    for _ in 0..level {
        let prev = out.last().expect("non-empty");
        out.push(&one + (&v - &one) * (&m * prev - &one) / &denom);
    }
    out
}

/// The solved recursion,
/// `(v^s - v)/D + (v^s - m·v)(v - 1)/D · (m(v-1)/(v^s - 1))^ℓ` with
/// `D = v^s - 1 - m(v - 1)`.
pub fn nbar_closed_form(params: &RhmParams, level: usize) -> Exact {
    let v = params.vocab;
    let m = params.rules;
    let vs = params.num_tuples();
    let denom = int(vs - 1 - m * (v - 1));
    let ratio = BigRational::new(BigInt::from(m * (v - 1)), BigInt::from(vs - 1));
    let fixed = int(vs - v) / &denom;
    let amplitude = int(vs - m * v) * int(v - 1) / &denom;
    (fixed + amplitude * pow(&ratio, level)).into()
}

fn pow(x: &BigRational, n: usize) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..n {
        acc *= x;
    }
    acc
}

/// Loss bound `L̄_ℓ = ln N̄_ℓ` alongside the closed form and the large-`v, m`
/// asymptote `ln(1 + v·(m/v^(s-1))^ℓ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBound {
    pub level: usize,
    pub bound: f64,
    pub closed_form: f64,
    pub asymptotic: f64,
}

pub fn loss_bound(params: &RhmParams, level: usize) -> LossBound {
    let ratio = params.rules as f64 / params.max_rules() as f64;
    LossBound {
        level,
        bound: nbar(params, level).value.ln(),
        closed_form: nbar_closed_form(params, level).value.ln(),
        asymptotic: (1.0 + params.vocab as f64 * ratio.powi(level as i32)).ln(),
    }
}

/// `P_ℓ = v·m^(2ℓ-1)` as a big integer.
pub fn sample_complexity_exact(params: &RhmParams, level: usize) -> BigUint {
    assert!(level >= 1, "sample complexity is defined for levels >= 1");
    BigUint::from(params.vocab) * BigUint::from(params.rules).pow(2 * level as u32 - 1)
}

/// `P_ℓ = v·m^(2ℓ-1)`; errors with the exact decimal value if it overflows `u64`.
pub fn sample_complexity(params: &RhmParams, level: usize) -> Result<u64> {
    if level < 1 {
        return Err(RhmError::InvalidLevel {
            level,
            depth: params.depth,
        });
    }
    let exact = sample_complexity_exact(params, level);
    exact
        .to_u64()
        .ok_or_else(|| RhmError::Overflow(exact.to_string()))
}

/// Distinct sequences of size `s^ℓ`: `v·m^((s^ℓ - 1)/(s - 1))`.
pub fn count_sequences(params: &RhmParams, level: usize) -> BigUint {
    let nodes = (BigUint::from(params.branching).pow(level as u32) - 1u32) / (params.branching - 1);
    let nodes = nodes.to_u32().expect("exponent fits in u32");
    BigUint::from(params.vocab) * BigUint::from(params.rules).pow(nodes)
}

/// Squared plateau `v^-3 · m^(1-2ℓ)` as an exact rational.
pub fn plateau_squared(params: &RhmParams, level: usize) -> BigRational {
    let v = BigInt::from(params.vocab);
    let m = BigInt::from(params.rules);
    let num = m.clone();
    let den = v.pow(3) * m.pow(2 * level as u32);
    BigRational::new(num, den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub level: usize,
    pub sample_complexity: Option<BigUint>,
    pub nbar: Exact,
    pub loss_bound: f64,
    pub plateau: Option<f64>,
    pub tuple_plateau: Option<f64>,
}

/// Rows `ℓ = 0..=L` of the predicted staircase.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryTable {
    pub params: RhmParams,
    pub rows: Vec<TheoryRow>,
}

impl TheoryTable {
    pub fn new(params: &RhmParams) -> Self {
        let plateaus = analytic_plateaus(params);
        let rows = nbar_sequence(params, params.depth)
            .into_iter()
            .enumerate()
            .map(|(level, n)| {
                let nbar: Exact = n.into();
                let plateau = (level >= 1).then(|| plateaus.rows[level - 1]);
                TheoryRow {
                    level,
                    sample_complexity: (level >= 1).then(|| sample_complexity_exact(params, level)),
                    loss_bound: nbar.value.ln(),
                    nbar,
                    plateau: plateau.map(|p| p.plateau),
                    tuple_plateau: plateau.map(|p| p.tuple_plateau),
                }
            })
            .collect();
        TheoryTable {
            params: *params,
            rows,
        }
    }

    /// CSV with header `ell,P_ell,Nbar,Lbar_nats,Ctilde,Ctilde_tuple`.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "ell,P_ell,Nbar,Lbar_nats,Ctilde,Ctilde_tuple")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.level,
                r.sample_complexity
                    .as_ref()
                    .map(ToString::to_string)
                    .unwrap_or_default(),
                fmt_f64(r.nbar.value),
                fmt_f64(r.loss_bound),
                r.plateau.map(fmt_f64).unwrap_or_default(),
                r.tuple_plateau.map(fmt_f64).unwrap_or_default(),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: usize, s: usize, m: usize) -> RhmParams {
        RhmParams::new(3, s, v, m).unwrap()
    }

    #[test]
    fn nbar_values() {
        let p = params(32, 2, 8);
        assert_eq!(nbar(&p, 0).value, 32.0);
        assert_eq!(
            nbar(&p, 1).exact,
            BigRational::new(8928.into(), 1023.into())
        );
        assert!((nbar(&p, 1).value - 8.7273).abs() < 1e-4);
        assert!((nbar(&p, 2).value - 3.0854).abs() < 1e-4);
        assert!((nbar(&p, 3).value - 1.7177).abs() < 1e-4);
        assert!((nbar(&params(8, 2, 2), 1).value - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_nbar_is_fixed_at_v() {
        let p = params(4, 3, 16);
        for level in 0..6 {
            assert_eq!(nbar(&p, level).exact, int(4));
        }
    }

    #[test]
    fn loss_bounds() {
        let p = params(32, 2, 8);
        assert!((loss_bound(&p, 0).bound - 3.4657).abs() < 1e-4);
        assert!((loss_bound(&p, 1).bound - 2.1665).abs() < 1e-4);
        assert!((loss_bound(&p, 2).bound - 1.1267).abs() < 1e-4);
        assert!((loss_bound(&p, 3).bound - 0.5410).abs() < 1e-4);
        let single = params(8, 2, 1);
        assert!(loss_bound(&single, 12).asymptotic < 1e-9);
        assert!(loss_bound(&single, 12).bound < loss_bound(&single, 1).bound);
    }

    #[test]
    fn closed_form_equals_recursion() {
        for &(v, s, m) in &[(8, 2, 2), (32, 2, 8), (5, 3, 7), (3, 2, 1), (4, 2, 4)] {
            let p = params(v, s, m);
            for level in 0..=10 {
                assert_eq!(nbar(&p, level).exact, nbar_closed_form(&p, level).exact);
            }
        }
    }

    #[test]
    fn sample_complexities() {
        let p = params(32, 2, 8);
        assert_eq!(sample_complexity(&p, 1).unwrap(), 256);
        assert_eq!(sample_complexity(&p, 2).unwrap(), 16384);
        assert_eq!(sample_complexity(&p, 3).unwrap(), 1048576);
        let q = params(8, 2, 2);
        assert_eq!(
            (1..=3)
                .map(|l| sample_complexity(&q, l).unwrap())
                .collect::<Vec<_>>(),
            vec![16, 64, 256]
        );
        assert!(sample_complexity(&p, 0).is_err());
        match sample_complexity(&p, 40) {
            Err(RhmError::Overflow(s)) => {
                assert_eq!(s, sample_complexity_exact(&p, 40).to_string())
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sequence_counts() {
        assert_eq!(count_sequences(&params(4, 2, 2), 2), BigUint::from(32u32));
        assert_eq!(
            count_sequences(&params(32, 2, 8), 3),
            BigUint::from(67108864u64)
        );
        for level in 1..5 {
            assert_eq!(
                count_sequences(&params(7, 3, 1), level),
                BigUint::from(7u32)
            );
        }
    }

    #[test]
    fn table_csv() {
        let mut out = Vec::new();
        TheoryTable::new(&params(32, 2, 8))
            .write_csv(&mut out)
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ell,P_ell,Nbar,Lbar_nats,Ctilde,Ctilde_tuple");
        assert!(lines[1].starts_with("0,,32,"));
        assert!(lines[1].ends_with(",,"));
        assert!(lines[2].starts_with("1,256,"));
        assert!(lines[4].starts_with("3,1048576,"));
    }
}
