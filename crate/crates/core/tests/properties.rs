use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rhm::corpus::{
    collapse_rescale, corpus_corr_curve, corpus_effective_window, fit_powerlaw, BlockSampling,
    LossRow,
};
use rhm::correlations::{
    analytic_plateaus, count_sequences, effective_window, exact_corr_curve, CooccurrenceCounts,
};
use rhm::exact::{enumerate_sequences, exact_conditional_loss, joint, marginal, DEFAULT_CAP};
use rhm::rng::{stream, Purpose};
use rhm::theory::{loss_bound, nbar, nbar_closed_form, sample_complexity_exact};
use rhm::tree::{
    default_position, sample_derivation, sample_sequences, transform_reset, transform_substitute,
};
use rhm::{Corpus, CorrCurve, DerivationTree, Grammar, LossTable, PowerLawFit, RhmParams, Symbol};

fn small_params() -> impl Strategy<Value = RhmParams> {
    (1usize..=3, 2usize..=3, 2usize..=5)
        .prop_flat_map(|(depth, s, v)| {
            let max_m = v.pow(s as u32 - 1).min(4);
            (
                Just(depth),
                Just(s),
                Just(v),
                1..=max_m,
                any::<u64>(),
                any::<u64>(),
            )
        })
        .prop_map(|(depth, s, v, m, gs, ss)| {
            RhmParams::new(depth, s, v, m)
                .unwrap()
                .with_grammar_seed(gs)
                .with_sample_seed(ss)
        })
}

/// Grammars with at most a few thousand sequences.
fn enumerable_params() -> impl Strategy<Value = RhmParams> {
    (1usize..=2, 2usize..=4)
        .prop_flat_map(|(depth, v)| (Just(depth), Just(v), 1..=v.min(3), any::<u64>()))
        .prop_map(|(depth, v, m, gs)| {
            RhmParams::new(depth, 2, v, m)
                .unwrap()
                .with_grammar_seed(gs)
        })
}

fn assert_curves_close(a: &CorrCurve, b: &CorrCurve, tol: f64) {
    assert_eq!(a.entries.len(), b.entries.len());
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert_eq!(x.t, y.t);
        assert!(
            (x.value - y.value).abs() <= tol,
            "t={}: {} vs {}",
            x.t,
            x.value,
            y.value
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grammars_are_unambiguous(params in small_params()) {
        let g = Grammar::build(params).unwrap();
        prop_assert!(g.check().is_ok());
        for level in 1..=params.depth {
            let mut seen = HashSet::new();
            let mut count = 0;
            for (_, tuple) in g.productions(level) {
                prop_assert!(seen.insert(tuple.to_vec()));
                count += 1;
            }
            prop_assert_eq!(count, params.vocab * params.rules);
        }
    }

    #[test]
    fn rederivation_reproduces_leaves(params in small_params(), index in 0u64..1_000_000) {
        let g = Grammar::build(params).unwrap();
        let tree = sample_derivation(&g, index);
        let again = DerivationTree::from_choices(&g, tree.root(), tree.choices().to_vec()).unwrap();
        prop_assert_eq!(again.leaves(), tree.leaves());
        prop_assert_eq!(sample_derivation(&g, index), tree);
    }

    #[test]
    fn reset_only_touches_the_subtree(params in small_params(), index in 0u64..1000, level_pick in 0usize..8, seed in any::<u64>()) {
        let g = Grammar::build(params).unwrap();
        let level = 1 + level_pick % params.depth;
        let tree = sample_derivation(&g, index);
        let mut r = stream(seed, Purpose::Transform, index);
        let after = transform_reset(&g, &tree, level, &mut r, None).unwrap();
        for k in level..=params.depth {
            prop_assert_eq!(after.level(k), tree.level(k));
        }
        let pos = default_position(&params, level);
        let span = params.branching.pow(level as u32);
        for (i, (a, b)) in tree.leaves().iter().zip(after.leaves()).enumerate() {
            if i / span != pos {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn substitute_changes_one_symbol_at_its_level(params in small_params(), index in 0u64..1000, level_pick in 0usize..8, seed in any::<u64>()) {
        let g = Grammar::build(params).unwrap();
        let level = 1 + level_pick % params.depth;
        let tree = sample_derivation(&g, index);
        let mut r = stream(seed, Purpose::Transform, index);
        let after = transform_substitute(&g, &tree, level, &mut r, None).unwrap();
        let changed = tree.level(level).iter().zip(after.level(level)).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, 1);
        for k in level + 1..=params.depth {
            prop_assert_eq!(after.level(k), tree.level(k));
        }
        let span = params.branching.pow(level as u32);
        let pos = default_position(&params, level);
        for (i, (a, b)) in tree.leaves().iter().zip(after.leaves()).enumerate() {
            if i / span != pos {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sampling_is_exchangeable(params in small_params(), seed in any::<u64>()) {
        let g = Grammar::build(params).unwrap();
        let mut forward = sample_sequences(&g, 0, 64);
        let mut order: Vec<u64> = (0..64).collect();
        order.shuffle(&mut stream(seed, Purpose::Synthetic, 0));
        let mut shuffled: Vec<Vec<Symbol>> = order.iter().map(|&i| sample_derivation(&g, i).into_leaves()).collect();
        forward.sort();
        shuffled.sort();
        prop_assert_eq!(forward, shuffled);
    }

    #[test]
    fn dp_matches_enumeration(params in enumerable_params()) {
        let g = Grammar::build(params).unwrap();
        let seqs = enumerate_sequences(&g, DEFAULT_CAP).unwrap();
        let (d, v) = (params.seq_len(), params.vocab);
        for i in 0..d {
            let m = marginal(&g, i + 1).unwrap();
            prop_assert!(m.probs.iter().all(|&p| p >= 0.0));
            prop_assert!((m.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut want = vec![0.0; v];
            for ws in &seqs {
                want[ws.tokens[i] as usize] += ws.prob;
            }
            for (a, b) in m.probs.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for j in i + 1..d {
                let jd = joint(&g, i + 1, j + 1).unwrap();
                prop_assert!(jd.probs.iter().all(|&p| p >= 0.0));
                prop_assert!((jd.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut want = vec![0.0; v * v];
                for ws in &seqs {
                    want[ws.tokens[i] as usize * v + ws.tokens[j] as usize] += ws.prob;
                }
                for (a, b) in jd.probs.iter().zip(&want) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conditional_loss_is_monotone_and_obeys_jensen(params in enumerable_params()) {
        let params = RhmParams::new(3, 2, params.vocab, params.rules).unwrap().with_grammar_seed(params.grammar_seed);
        let g = Grammar::build(params).unwrap();
        let losses: Vec<_> = (0..=3).map(|l| exact_conditional_loss(&g, l, DEFAULT_CAP).unwrap()).collect();
        for w in losses.windows(2) {
            prop_assert!(w[1].loss_nats <= w[0].loss_nats + 1e-12, "{} > {}", w[1].loss_nats, w[0].loss_nats);
        }
        for l in &losses {
            prop_assert!(l.jensen_holds());
        }
    }

    #[test]
    fn plateaus_step_down_by_m(v in 2usize..40, s in 2usize..4, depth in 1usize..7, m_pick in 0usize..1000) {
        let max_m = v.pow(s as u32 - 1).min(200);
        prop_assume!(max_m > 2);
        let m = 2 + m_pick % (max_m - 2);
        let params = RhmParams::new(depth, s, v, m).unwrap();
        let rows = analytic_plateaus(&params).rows;
        for w in rows.windows(2) {
            prop_assert!(w[1].plateau < w[0].plateau);
            prop_assert!((w[1].plateau / w[0].plateau * m as f64 - 1.0).abs() < 1e-12);
        }
        for r in &rows {
            prop_assert!((r.tuple_plateau * (m as f64).sqrt() / r.plateau - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_is_monotone(v in 2usize..40, depth in 1usize..7, m_pick in 0usize..1000, p in 1u64..1_000_000_000) {
        let m = 1 + m_pick % v;
        let params = RhmParams::new(depth, 2, v, m).unwrap();
        let here = effective_window(&params, p);
        prop_assert!(effective_window(&params, p + 1).level >= here.level);
        prop_assert!(effective_window(&params, p.saturating_mul(3)).level >= here.level);
        if m > 1 {
            let fewer = RhmParams::new(depth, 2, v, m - 1).unwrap();
            prop_assert!(effective_window(&fewer, p).level >= here.level);
        }
        // jumps only where P crosses some P_ell
        let next = effective_window(&params, p + 1);
        if next.level != here.level {
            prop_assert_eq!(sample_complexity_exact(&params, next.level), p.into());
        }
    }

    #[test]
    fn relabeling_leaves_curves_unchanged(tokens in prop::collection::vec(0u32..6, 200..600), seed in any::<u64>()) {
        let mut perm: Vec<Symbol> = (0..6).collect();
        perm.shuffle(&mut stream(seed, Purpose::Synthetic, 1));
        let relabeled: Vec<Symbol> = tokens.iter().map(|&x| perm[x as usize]).collect();
        let a = Corpus::from_tokens(tokens, 6).unwrap();
        let b = Corpus::from_tokens(relabeled, 6).unwrap();
        for sampling in [BlockSampling::Exhaustive, BlockSampling::Random { blocks: 300, seed }] {
            let ca = corpus_corr_curve(&a, 17, sampling).unwrap();
            let cb = corpus_corr_curve(&b, 17, sampling).unwrap();
            assert_curves_close(&ca, &cb, 1e-14);
        }
        let seqs: Vec<Vec<Symbol>> = a.tokens.chunks_exact(10).map(<[_]>::to_vec).collect();
        let mapped: Vec<Vec<Symbol>> = seqs.iter().map(|s| s.iter().map(|&x| perm[x as usize]).collect()).collect();
        let ca = count_sequences(&seqs, 6).unwrap().curve("a").unwrap();
        let cb = count_sequences(&mapped, 6).unwrap().curve("b").unwrap();
        assert_curves_close(&ca, &cb, 1e-14);
    }

    #[test]
    fn character_relabeling_is_invisible(text in "[a-e ]{50,300}", shift in 1u8..20) {
        let mapped: String = text.chars().map(|c| (c as u8 + shift + 60) as char).collect();
        let a = Corpus::from_text(&text, 256).unwrap();
        let b = Corpus::from_text(&mapped, 256).unwrap();
        let ca = corpus_corr_curve(&a, 9, BlockSampling::Exhaustive).unwrap();
        let cb = corpus_corr_curve(&b, 9, BlockSampling::Exhaustive).unwrap();
        prop_assert_eq!(ca.values(), cb.values());
    }

    #[test]
    fn window_scaling_identity(beta in 0.2f64..3.0, a in 1e-4f64..1.0, v in 2usize..100, p in 1e2f64..1e8, c in 1.01f64..100.0) {
        let fit = PowerLawFit { beta, amplitude: a, t_min: 2, t_max: 64, points: 10, residual: 0.0, z: 2.0 * beta };
        let t = corpus_effective_window(&fit, p, v).unwrap();
        let tc = corpus_effective_window(&fit, c * p, v).unwrap();
        prop_assert!(tc > t);
        prop_assert!((tc / t / c.powf(1.0 / (2.0 * beta)) - 1.0).abs() < 1e-12);
        let bigger_a = PowerLawFit { amplitude: a * c, ..fit };
        prop_assert!(corpus_effective_window(&bigger_a, p, v).unwrap() > t);
    }

    #[test]
    fn closed_form_is_exact(v in 2usize..50, s in 2usize..4, m_pick in 0usize..10_000, level in 0usize..12) {
        let m = 1 + m_pick % v.pow(s as u32 - 1).min(5000);
        let params = RhmParams::new(3, s, v, m).unwrap();
        prop_assert_eq!(nbar(&params, level).exact, nbar_closed_form(&params, level).exact);
        if level >= 1 {
            let ratio = sample_complexity_exact(&params, level + 1) / sample_complexity_exact(&params, level);
            prop_assert_eq!(ratio, (m * m).into());
            prop_assert_eq!(sample_complexity_exact(&params, level + 1) % sample_complexity_exact(&params, level), 0u32.into());
        }
    }

    #[test]
    fn collapse_ignores_row_order(seed in any::<u64>()) {
        let mut r = stream(seed, Purpose::Synthetic, 2);
        let rows: Vec<LossRow> = (0..30)
            .map(|i| LossRow { samples: 10.0 + i as f64 * 37.0, t: r.gen_range(1.0..64.0), loss: r.gen_range(0.1..5.0) })
            .collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut r);
        let key = |x: &rhm::corpus::CollapsedRow| (x.samples.to_bits(), x.t.to_bits(), x.y1.to_bits(), x.y2.to_bits());
        let mut a: Vec<_> = collapse_rescale(&LossTable::new(rows).unwrap(), 0.3, 2.8).unwrap().iter().map(key).collect();
        let mut b: Vec<_> = collapse_rescale(&LossTable::new(shuffled).unwrap(), 0.3, 2.8).unwrap().iter().map(key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

fn max_error(g: &Grammar, exact: &CorrCurve, p: u64, start: u64) -> f64 {
    let params = g.params();
    let mut counts = CooccurrenceCounts::new(params.seq_len(), params.vocab);
    for seq in sample_sequences(g, start, p) {
        counts.push(&seq).unwrap();
    }
    let curve = counts.curve("x").unwrap();
    curve
        .entries
        .iter()
        .zip(&exact.entries)
        .map(|(a, b)| (a.value - b.value).abs())
        .fold(0.0, f64::max)
}

#[test]
fn empirical_error_shrinks_as_inverse_sqrt_p() {
    let g = Grammar::build(RhmParams::new(2, 2, 4, 2).unwrap().with_grammar_seed(3)).unwrap();
    let exact = exact_corr_curve(&g).unwrap();
    let reps = 200;
    let p = 4_000;
    let mean = |size: u64| {
        (0..reps)
            .map(|k| max_error(&g, &exact, size, k * 1_000_000))
            .sum::<f64>()
            / reps as f64
    };
    let ratio = mean(2 * p) / mean(p);
    let target = 0.5f64.sqrt();
    assert!((ratio / target - 1.0).abs() < 0.3, "error ratio {ratio}");
}

#[test]
fn power_law_fit_recovers_beta_within_three_sigma() {
    let sigma = 0.05;
    for seed in 0..20 {
        let mut r = stream(seed, Purpose::Synthetic, 3);
        let beta = r.gen_range(0.5..2.0);
        let a: f64 = r.gen_range(0.01..1.0);
        let entries = (1..=64)
            .map(|t| {
                // Box-Muller
                let (u1, u2): (f64, f64) = (r.gen_range(f64::EPSILON..1.0), r.gen());
                let xi = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                rhm::CorrEntry {
                    t,
                    value: a * (t as f64).powf(-beta) * (sigma * xi).exp(),
                    noise_floor: None,
                }
            })
            .collect();
        let curve = CorrCurve {
            entries,
            source: rhm::CurveSource::Empirical,
            samples: None,
            label: "synthetic".into(),
        };
        let fit = fit_powerlaw(&curve, 2, 64, 2.0).unwrap();
        let lx: Vec<f64> = (2..=64).map(|t| (t as f64).ln()).collect();
        let mean = lx.iter().sum::<f64>() / lx.len() as f64;
        let sxx: f64 = lx.iter().map(|x| (x - mean).powi(2)).sum();
        let se = sigma / sxx.sqrt();
        assert!(
            (fit.beta - beta).abs() <= 3.0 * se,
            "seed {seed}: {} vs {beta} (se {se})",
            fit.beta
        );
    }
}

#[test]
fn enumerated_loss_respects_the_ensemble_bound() {
    let params = RhmParams::new(3, 2, 4, 2).unwrap();
    for level in 1..=3 {
        let losses: Vec<f64> = (0..100)
            .map(|seed| {
                let g = Grammar::build(params.with_grammar_seed(seed)).unwrap();
                exact_conditional_loss(&g, level, DEFAULT_CAP)
                    .unwrap()
                    .loss_nats
            })
            .collect();
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let var = losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let bound = loss_bound(&params, level).bound;
        assert!(
            mean <= bound + 3.0 * (var / n).sqrt(),
            "level {level}: {mean} > {bound}"
        );
    }
}
