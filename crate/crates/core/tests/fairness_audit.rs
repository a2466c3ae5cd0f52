use pretrial_core::fairness::{
    audit, auc, binormal_error_rates, binormal_mu, calibration_table, draw_binormal, equal_width_edges,
    error_rate_balance, group_auc, max_calibration_gap, psa_scale_edges, tradeoff_demo, AuditCase, BinaryCase,
    BinormalGroup, FairnessError, ScoredCase, TradeoffSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(cases: &[ScoredCase]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for p in cases.iter().filter(|c| c.outcome) {
        for q in cases.iter().filter(|c| !c.outcome) {
            pairs += 1.0;
            if p.score > q.score {
                wins += 1.0;
            } else if p.score == q.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_cases(seed: u64, n: usize) -> Vec<ScoredCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<ScoredCase> = (0..n)
        .map(|_| {
            // Coarse scores force plenty of ties.
            let score = (rng.random_range(0.0..1.0f64) * 20.0).floor() / 20.0;
            ScoredCase::new(score, rng.random_bool(0.3 + 0.4 * score), "g")
        })
        .collect();
    cases[0].outcome = true;
    cases[1].outcome = false;
    cases
}

#[test]
fn auc_edge_cases() {
    let perfect = [ScoredCase::new(0.9, true, "a"), ScoredCase::new(0.1, false, "a")];
    assert_eq!(auc(&perfect).unwrap(), 1.0);
    let ties: Vec<_> = (0..10).map(|i| ScoredCase::new(0.4, i % 2 == 0, "a")).collect();
    assert_eq!(auc(&ties).unwrap(), 0.5);
    assert_eq!(auc(&perfect[..1]), Err(FairnessError::SingleClass));
}

#[test]
fn rank_formula_matches_pairwise_enumeration() {
    for seed in 0..100 {
        let cases = random_cases(seed, 200);
        let (a, b) = (auc(&cases).unwrap(), pairwise_auc(&cases));
        assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps(seed in 0u64..1_000_000) {
        let cases = random_cases(seed, 80);
        let base = auc(&cases).unwrap();
        for f in [|s: f64| 2.0 * s + 1.0, |s: f64| s.exp()] {
            let mapped: Vec<_> = cases.iter().map(|c| ScoredCase::new(f(c.score), c.outcome, "g")).collect();
            prop_assert!((auc(&mapped).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_counts_partition_each_group(
        rows in proptest::collection::vec((proptest::option::of(any::<bool>()), any::<bool>(), 0u8..3), 1..200)
    ) {
        let cases: Vec<_> = rows
            .iter()
            .map(|(p, y, g)| BinaryCase { prediction: *p, outcome: *y, group: format!("g{g}") })
            .collect();
        let bal = error_rate_balance(&cases);
        for (g, c) in &bal.groups {
            let members: Vec<_> = cases.iter().filter(|x| &x.group == g && x.prediction.is_some()).collect();
            prop_assert_eq!(c.fp + c.tn, members.iter().filter(|x| !x.outcome).count());
            prop_assert_eq!(c.fn_ + c.tp, members.iter().filter(|x| x.outcome).count());
        }
        let sum = |f: fn(&pretrial_core::fairness::Confusion) -> usize| bal.groups.values().map(f).sum::<usize>();
        prop_assert_eq!(bal.overall.tp, sum(|c| c.tp));
        prop_assert_eq!(bal.overall.fp, sum(|c| c.fp));
        prop_assert_eq!(bal.overall.tn, sum(|c| c.tn));
        prop_assert_eq!(bal.overall.fn_, sum(|c| c.fn_));
        prop_assert_eq!(bal.overall.abstained, sum(|c| c.abstained));
    }
}

#[test]
fn group_auc_handles_single_class_groups() {
    let mut cases = random_cases(4, 100);
    assert_eq!(group_auc(&cases)["g"], Some(auc(&cases).unwrap()));
    cases.push(ScoredCase::new(0.2, true, "lonely"));
    let per = group_auc(&cases);
    assert_eq!(per["lonely"], None);
    assert!(per["g"].is_some());
}

#[test]
fn hand_built_error_rates() {
    let mut cases = Vec::new();
    let mut push = |g: &str, pred: bool, y: bool, n: usize| {
        for _ in 0..n {
            cases.push(BinaryCase { prediction: Some(pred), outcome: y, group: g.into() });
        }
    };
    push("a", true, false, 3);
    push("a", false, false, 7);
    push("b", true, false, 6);
    push("b", false, false, 4);
    push("c", true, true, 5);
    let bal = error_rate_balance(&cases);
    assert!((bal.groups["a"].fpr().unwrap() - 0.3).abs() < 1e-12);
    assert!((bal.groups["b"].fpr().unwrap() - 0.6).abs() < 1e-12);
    assert!((bal.fpr_gap.unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(bal.groups["c"].fpr(), None);
}

#[test]
fn identical_groups_have_no_gaps() {
    let mut cases = Vec::new();
    for g in ["a", "b"] {
        for (p, y) in [(true, true), (true, false), (false, false), (false, true), (false, false)] {
            cases.push(BinaryCase { prediction: Some(p), outcome: y, group: g.into() });
        }
        cases.push(BinaryCase { prediction: None, outcome: true, group: g.into() });
    }
    let bal = error_rate_balance(&cases);
    assert_eq!((bal.fpr_gap, bal.fnr_gap, bal.abstention_gap), (Some(0.0), Some(0.0), Some(0.0)));
    assert_eq!(bal.groups["a"].abstained, 1);
}

#[test]
fn indicator_scores_are_perfectly_calibrated() {
    let cases: Vec<_> = (0..50).map(|i| ScoredCase::new((i % 2) as f64, i % 2 == 1, "a")).collect();
    let bins = calibration_table(&cases, &equal_width_edges(10)).unwrap();
    assert_eq!(bins.len(), 10);
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 50);
    for b in &bins {
        if b.count > 0 {
            assert_eq!(b.gap(), Some(0.0));
        } else {
            assert_eq!((b.predicted, b.observed), (None, None));
        }
    }
}

#[test]
fn psa_scale_bins_hold_one_value_each() {
    let cases: Vec<_> = (1..=6).map(|s| ScoredCase::new(s as f64, s > 3, "a")).collect();
    let bins = calibration_table(&cases, &psa_scale_edges()).unwrap();
    assert!(bins.iter().all(|b| b.count == 1));
}

#[test]
fn calibrated_two_group_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cases = Vec::new();
    for (name, rate) in [("a", 0.15), ("b", 0.3)] {
        cases.extend(draw_binormal(&BinormalGroup { name: name.into(), base_rate: rate, auc: 0.7, n: 10_000 }, &mut rng));
    }
    let bins = calibration_table(&cases, &equal_width_edges(10)).unwrap();
    let gap = max_calibration_gap(&bins, 1000).unwrap();
    assert!(gap <= 0.03, "{gap}");
}

#[test]
fn binormal_closed_form_against_simulation() {
    let g = BinormalGroup { name: "a".into(), base_rate: 0.3, auc: 0.76, n: 200_000 };
    let cases = draw_binormal(&g, &mut ChaCha8Rng::seed_from_u64(2));
    let (fpr, fnr) = binormal_error_rates(0.3, binormal_mu(0.76), 0.25);
    let neg: Vec<_> = cases.iter().filter(|c| !c.outcome).collect();
    let pos: Vec<_> = cases.iter().filter(|c| c.outcome).collect();
    let sim_fpr = neg.iter().filter(|c| c.score >= 0.25).count() as f64 / neg.len() as f64;
    let sim_fnr = pos.iter().filter(|c| c.score < 0.25).count() as f64 / pos.len() as f64;
    assert!((sim_fpr - fpr).abs() < 0.005, "{sim_fpr} vs {fpr}");
    assert!((sim_fnr - fnr).abs() < 0.005, "{sim_fnr} vs {fnr}");
}

fn spec(rates: [f64; 2], auc: f64, seed: u64) -> TradeoffSpec {
    TradeoffSpec {
        groups: vec![
            BinormalGroup { name: "a".into(), base_rate: rates[0], auc, n: 20_000 },
            BinormalGroup { name: "b".into(), base_rate: rates[1], auc, n: 20_000 },
        ],
        threshold: 0.25,
        bins: 10,
        min_bin_count: 2000,
        seed,
    }
}

#[test]
fn unequal_base_rates_force_unequal_error_rates() {
    let r = tradeoff_demo(&spec([0.148, 0.30], 0.76, 5)).unwrap();
    assert!(r.max_calibration_gap.unwrap() <= 0.03, "{r:?}");
    assert!(r.fpr_gap.unwrap() >= 0.05, "{r:?}");
    let expected = r.expected_fpr_gap.unwrap();
    assert!((r.fpr_gap.unwrap() - expected).abs() <= 4.0 * r.fpr_gap_sigma.unwrap());
}

#[test]
fn equal_base_rates_show_only_noise() {
    let r = tradeoff_demo(&spec([0.2, 0.2], 0.76, 6)).unwrap();
    assert!(r.fpr_gap.unwrap() <= 2.0 * r.fpr_gap_sigma.unwrap(), "{r:?}");
    assert!(!r.notes.is_empty());
}

#[test]
fn perfect_scorer_has_no_tradeoff() {
    let r = tradeoff_demo(&spec([0.148, 0.30], 1.0, 7)).unwrap();
    assert_eq!(r.fpr_gap, Some(0.0));
    assert_eq!(r.fnr_gap, Some(0.0));
    assert_eq!(r.max_calibration_gap, Some(0.0));
    assert!(r.notes.iter().any(|n| n.contains("imperfect")));
}

#[test]
fn audit_report_exports() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<AuditCase> = (0..400)
        .map(|i| {
            let score = rng.random_range(1..=6) as f64;
            AuditCase {
                score,
                prediction: if i % 10 == 0 { None } else { Some(score >= 5.0) },
                outcome: rng.random_bool(score / 10.0),
                group: if i % 2 == 0 { "A".into() } else { "B".into() },
            }
        })
        .collect();
    let report = audit(&cases, &psa_scale_edges(), 10).unwrap();
    for g in report.groups.values() {
        for r in [g.auc, g.fpr, g.fnr, g.abstention_rate].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&r));
        }
    }
    for g in ["A", "B"] {
        let n: usize = report.calibration.iter().filter(|b| b.group == g).map(|b| b.count).sum();
        assert_eq!(n, report.groups[g].count);
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("group,metric,bin_lower,bin_upper,count,value\n"));
    assert!(csv.contains("A,fpr,"));
    let back: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(back["groups"]["B"]["auc"].is_number());
}

#[test]
fn ordinal_scores_calibrate_against_the_pooled_rate() {
    // Score 1: A 2/10, B 6/10, pooled 0.4. Score 2: both 5/10.
    let mut cases = Vec::new();
    for (score, group, positives) in [(1.0, "A", 2), (1.0, "B", 6), (2.0, "A", 5), (2.0, "B", 5)] {
        for i in 0..10 {
            cases.push(AuditCase { score, prediction: Some(score > 1.0), outcome: i < positives, group: group.into() });
        }
    }
    let mut report = audit(&cases, &psa_scale_edges(), 1).unwrap();
    report.calibrate_against_pooled();
    let bin = |g: &str, s: f64| report.calibration.iter().find(|b| b.group == g && b.lower < s && s < b.upper).unwrap();
    assert!((bin("A", 1.0).predicted.unwrap() - 0.4).abs() < 1e-12);
    assert!((bin("B", 2.0).predicted.unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(bin("A", 4.0).predicted, None);
    assert!((report.max_calibration_gap.unwrap() - 0.2).abs() < 1e-12);
    assert!((report.groups["B"].max_calibration_gap.unwrap() - 0.2).abs() < 1e-12);
}
