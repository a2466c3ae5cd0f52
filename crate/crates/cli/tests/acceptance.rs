//! Acceptance run: one PASS/FAIL line per criterion, wall-clock budgets
//! included. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pretrial_cli::run;
use pretrial_core::data::{
    synthesize_population, CaseRecord, FeatureMap, FeatureValue, Outcome, Outcomes, PopulationSpec,
};
use pretrial_core::evaluation::{
    baseline_release_all, false_positive_framing, rates_by_score, score_records, ScoredRecord,
};
use pretrial_core::fairness::{
    auc, draw_binormal, group_auc, tradeoff_demo, BinormalGroup, ScoredCase, TradeoffSpec,
};
use pretrial_core::forest::{ForestConfig, HandoffForest};
use pretrial_core::psa::{compute_raw_scores, CaseInput, FactorVector, PsaConfig, SmoothingMode, MAX_AGE, MIN_AGE};
use pretrial_core::scenarios::{cluster_population, cluster_tree_config, mixed_population, score_population, DISTRICTS};
use pretrial_core::tree::{Condition, HandoffTree, RiskLabel, TreeConfig, TreeError, TreeNode};
use pretrial_service::{router, serve, AppState, Model, ServiceConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name).display().to_string()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("pretrial").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn point(age: f64, prior: f64) -> FeatureMap {
    BTreeMap::from([
        ("age".to_string(), FeatureValue::Numeric(age)),
        ("prior_fta".to_string(), FeatureValue::Numeric(prior)),
    ])
}

// 1
fn appendix_fidelity() -> Check {
    let case = data("appendix1_case.toml");
    let (code, out, err) = cli(&["score", "--factors", &case, "--exclusions", &data("sf_exclusions.toml")]);
    ensure!(code == 0, "score exited {code}: {err}");
    let lines: Vec<&str> = out.lines().map(str::trim_end).collect();
    for want in ["New Violent Criminal Activity Flag No", "Is this Response based on a Step 2 exclusion? Yes"] {
        ensure!(lines.contains(&want), "report lacks line {want:?}");
    }
    let (code, out, _) =
        cli(&["score", "--factors", &case, "--exclusions", &data("sf_exclusions.toml"), "--format", "json"]);
    ensure!(code == 0, "json score exited {code}");
    let v: Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
    ensure!(v["nvca_flag"] == json!(false), "nvca_flag {}", v["nvca_flag"]);
    ensure!(v["step2_applied"] == json!(true), "step2_applied {}", v["step2_applied"]);
    Ok("NVCA flag No, step-2 exclusion Yes, both report lines present".into())
}

fn all_answer_vectors(age: u32) -> Vec<FactorVector> {
    let mut out = Vec::new();
    for bits in 0..64u32 {
        let b = |i: u32| bits & (1 << i) != 0;
        for violent in 0..=3 {
            for fta2 in 0..=2 {
                out.push(FactorVector::from_answers(age, b(0), b(1), b(2), b(3), violent, fta2, b(4), b(5)));
            }
        }
    }
    out
}

fn with_age(f: &FactorVector, age: u32) -> FactorVector {
    FactorVector::from_answers(
        age,
        f.current_violent_offense,
        f.pending_charge,
        f.prior_misdemeanor_conviction,
        f.prior_felony_conviction,
        f.prior_violent_convictions,
        f.prior_fta_past_2y,
        f.prior_fta_older_2y,
        f.prior_sentence_incarceration,
    )
}

// 2
fn age_discontinuity() -> Check {
    let w = PsaConfig::default().weights;
    let vectors = all_answer_vectors(22);
    for f in &vectors {
        let young = compute_raw_scores(f, &w, SmoothingMode::Off).map_err(|e| e.to_string())?;
        let old = compute_raw_scores(&with_age(f, 23), &w, SmoothingMode::Off).map_err(|e| e.to_string())?;
        ensure!(young.nca - old.nca == 2.0, "raw NCA {} at 22 vs {} at 23 for {f:?}", young.nca, old.nca);
        ensure!(young.fta == old.fta, "raw FTA changed with age for {f:?}");
    }
    let mut worst: f64 = 0.0;
    for f in &vectors {
        for age in MIN_AGE..MAX_AGE {
            let a = compute_raw_scores(&with_age(f, age), &w, SmoothingMode::DEFAULT_RAMP).map_err(|e| e.to_string())?;
            let b = compute_raw_scores(&with_age(f, age + 1), &w, SmoothingMode::DEFAULT_RAMP).map_err(|e| e.to_string())?;
            let d = (a.nca - b.nca).abs();
            worst = worst.max(d);
            ensure!(d <= 1.0, "smoothed raw NCA jumps by {d} between ages {age} and {}", age + 1);
        }
    }
    Ok(format!("{} vectors: NCA drop exactly 2 at 22->23; smoothed max adjacent delta {worst}", vectors.len()))
}

// 3
fn release_all_baseline() -> Check {
    let spec = PopulationSpec::single_group(0.148, 20_240);
    let recs = synthesize_population(&spec, 100_000).map_err(|e| e.to_string())?;
    let acc = baseline_release_all(&recs, Outcome::Fta).map_err(|e| e.to_string())?;
    ensure!((acc - 0.852).abs() <= 0.005, "baseline {acc:.4} outside 0.852 +- 0.005");
    let constructed: Vec<CaseRecord> = (0..100)
        .map(|i| CaseRecord {
            case_id: format!("k{i:03}"),
            features: FeatureMap::new(),
            protected: BTreeMap::new(),
            released: true,
            outcomes: Outcomes { fta: Some(i < 46), nca: None, nvca: None },
            psa_factors: None,
        })
        .collect();
    let exact = baseline_release_all(&constructed, Outcome::Fta).map_err(|e| e.to_string())?;
    ensure!(exact == 0.54, "constructed baseline {exact}, expected 0.54");
    Ok(format!("synthetic baseline {acc:.4}; constructed 46/100 gives {exact}"))
}

// 4
fn table_three_machinery() -> Check {
    let recs = score_population(5000, 3);
    let scored = score_records(&recs, &PsaConfig::default()).map_err(|e| e.to_string())?;
    let rows = rates_by_score(&scored).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (score, fta, nca, nvca) in [(5u8, 0.26, 0.20, 0.03), (6, 0.32, 0.26, 0.04)] {
        let row = rows.iter().find(|r| r.score == score).ok_or(format!("no row for score {score}"))?;
        for (outcome, want, tol) in [(Outcome::Fta, fta, 0.02), (Outcome::Nca, nca, 0.02), (Outcome::Nvca, nvca, 0.01)] {
            let cell = row.cell(outcome);
            ensure!(cell.count >= 5000, "{outcome} score {score}: only {} released cases", cell.count);
            let got = cell.rate.ok_or(format!("{outcome} score {score}: empty"))?;
            worst = worst.max((got - want).abs() / tol);
            ensure!((got - want).abs() <= tol, "{outcome} score {score}: {got:.4} vs {want} +- {tol}");
        }
    }
    let framed = false_positive_framing(&rows);
    let get = |o: Outcome| framed.iter().find(|c| c.outcome == o && c.score == 5).map(|c| c.non_offense_rate);
    let (f, v) = (get(Outcome::Fta).ok_or("no FTA framing")?, get(Outcome::Nvca).ok_or("no NVCA framing")?);
    ensure!((f - 0.74).abs() <= 0.02 && (v - 0.97).abs() <= 0.01, "recovered complements {f:.4}, {v:.4}");

    // The same framing on a cell holding exactly the published rates.
    let exact: Vec<ScoredRecord> = (0..100)
        .map(|i| ScoredRecord {
            case_id: format!("t{i}"),
            released: true,
            outcomes: Outcomes { fta: Some(i < 26), nca: Some(i < 20), nvca: Some(i < 3) },
            scaled_fta: Some(5),
            scaled_nca: Some(5),
        })
        .collect();
    let framed = false_positive_framing(&rates_by_score(&exact).map_err(|e| e.to_string())?);
    let get = |o: Outcome| framed.iter().find(|c| c.outcome == o).map(|c| c.non_offense_rate).unwrap_or(f64::NAN);
    ensure!((get(Outcome::Fta) - 0.74).abs() < 1e-12, "FTA complement {}", get(Outcome::Fta));
    ensure!((get(Outcome::Nvca) - 0.97).abs() < 1e-12, "NVCA complement {}", get(Outcome::Nvca));
    Ok(format!("{} cases; worst deviation {:.0}% of tolerance; complements 0.74 and 0.97", recs.len(), worst * 100.0))
}

fn pairwise_auc(cases: &[ScoredCase]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
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

// 5
fn auc_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases: Vec<ScoredCase> = (0..200)
            .map(|_| {
                let score = (rng.random_range(0.0..1.0f64) * 25.0).floor() / 25.0;
                ScoredCase::new(score, rng.random_bool(0.3 + 0.4 * score), "g")
            })
            .collect();
        cases[0].outcome = true;
        cases[1].outcome = false;
        let rank = auc(&cases).map_err(|e| e.to_string())?;
        let brute = pairwise_auc(&cases);
        worst = worst.max((rank - brute).abs());
        ensure!((rank - brute).abs() <= 1e-12, "seed {seed}: rank {rank} vs pairwise {brute}");
        for (name, map) in [("2s+1", (|s: f64| 2.0 * s + 1.0) as fn(f64) -> f64), ("exp", f64::exp)] {
            let moved: Vec<ScoredCase> =
                cases.iter().map(|c| ScoredCase::new(map(c.score), c.outcome, c.group.clone())).collect();
            let t = auc(&moved).map_err(|e| e.to_string())?;
            ensure!((t - rank).abs() <= 1e-12, "seed {seed}: AUC under {name} is {t}, was {rank}");
        }
    }
    Ok(format!("100 seeds x 200 cases; max |rank - pairwise| = {worst:.1e}"))
}

fn handoff_mass(tree: &HandoffTree) -> usize {
    tree.leaves().iter().filter(|l| l.label == RiskLabel::Handoff).map(|l| l.n).sum()
}

// 6
fn tree_soundness() -> Check {
    let mut leaves_seen = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let recs = mixed_population(1200, seed);
        let m = rng.random_range(5..80usize);
        let fpr = rng.random_range(0.0..0.8f64);
        let fnr = rng.random_range(0.0..0.4f64);
        let mut config = TreeConfig::new(Outcome::Fta, m, fpr, fnr);
        config.max_depth = rng.random_range(1..7usize);
        let fit = |c: &TreeConfig, r: &[CaseRecord]| HandoffTree::fit(r, c).map_err(|e| format!("seed {seed}: {e}"));
        let tree = fit(&config, &recs)?;

        // Partition: every training case lies in exactly one leaf region, the one predict reaches.
        let rows = tree.leaf_table();
        let total: usize = rows.iter().map(|r| r.stats.n).sum();
        ensure!(total == recs.len(), "seed {seed}: leaf supports sum to {total}");
        for r in &recs {
            let f = r.model_features(false);
            let owners: Vec<usize> = rows.iter().filter(|row| row.region.contains(&f)).map(|row| row.stats.leaf_id).collect();
            let reached = tree.predict(&f).map_err(|e| e.to_string())?.leaf_id;
            ensure!(owners == vec![reached], "seed {seed}: case {} in leaves {owners:?}, predict reaches {reached}", r.case_id);
        }

        // Threshold soundness and minimum support.
        for l in tree.leaves() {
            leaves_seen += 1;
            let (n, k) = (l.n as f64, l.k as f64);
            match l.label {
                RiskLabel::HighRisk => ensure!(l.n >= m && (n - k) / n <= fpr, "seed {seed}: leaf {} mislabeled HighRisk", l.leaf_id),
                RiskLabel::VeryLowRisk => ensure!(l.n >= m && k / n <= fnr, "seed {seed}: leaf {} mislabeled VeryLowRisk", l.leaf_id),
                RiskLabel::Handoff => ensure!(
                    l.error_rate.is_none() && (l.n < m || ((n - k) / n > fpr && k / n > fnr)),
                    "seed {seed}: leaf {} handed off though it qualifies",
                    l.leaf_id
                ),
            }
        }

        // Released-only training.
        let mut detained = recs.clone();
        let i = rng.random_range(0..detained.len());
        detained[i].released = false;
        ensure!(
            matches!(HandoffTree::fit(&detained, &config), Err(TreeError::NotTrainingEligible { .. })),
            "seed {seed}: a detained record was accepted"
        );

        // Determinism, including input order.
        ensure!(fit(&config, &recs)?.to_json() == tree.to_json(), "seed {seed}: refit differs");
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng);
        ensure!(fit(&config, &shuffled)?.to_json() == tree.to_json(), "seed {seed}: shuffled fit differs");

        // Looser thresholds never hand off more training cases.
        let mut loose = config.clone();
        loose.high_risk_max_fpr = (fpr + 0.1).min(1.0);
        loose.very_low_max_fnr = (fnr + 0.05).min(1.0);
        ensure!(handoff_mass(&fit(&loose, &recs)?) <= handoff_mass(&tree), "seed {seed}: loosening increased handoffs");

        // Larger minimum clusters never mean more leaves.
        let mut coarse = config.clone();
        coarse.min_cluster_size = m * 2;
        ensure!(fit(&coarse, &recs)?.leaf_count() <= tree.leaf_count(), "seed {seed}: larger m gave more leaves");
    }
    Ok(format!("50 datasets, {leaves_seen} leaves checked"))
}

// 7
fn narrative_recovery() -> Check {
    let recs = cluster_population(20_000, 11);
    let tree = HandoffTree::fit(&recs, &cluster_tree_config()).map_err(|e| e.to_string())?;
    let (mut low, mut high) = (Vec::new(), Vec::new());
    for age in 33..=60 {
        let p = tree.predict(&point(age as f64, 0.0)).map_err(|e| e.to_string())?;
        ensure!(p.label == RiskLabel::VeryLowRisk, "age {age}, no prior FTA: {:?}", p.label);
        let e = p.error_rate.unwrap_or(f64::NAN);
        ensure!((e - 0.13).abs() <= 0.05 && p.n >= 400, "age {age}: FNR {e:.3} on {} cases", p.n);
        low.push(e);
    }
    for prior in [4.0, 5.0] {
        for age in 18..=70 {
            let p = tree.predict(&point(age as f64, prior)).map_err(|e| e.to_string())?;
            ensure!(p.label == RiskLabel::HighRisk, "age {age}, prior_fta {prior}: {:?}", p.label);
            let e = p.error_rate.unwrap_or(f64::NAN);
            ensure!((e - 0.60).abs() <= 0.05 && p.n >= 400, "age {age}, prior {prior}: FPR {e:.3} on {} cases", p.n);
            high.push(e);
        }
    }
    let range = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max));
    let (l, h) = (range(&low), range(&high));
    Ok(format!("VeryLowRisk FNR {:.3}..{:.3}, HighRisk FPR {:.3}..{:.3}", l.0, l.1, h.0, h.1))
}

/// Share of labeled held-out cases whose label matches the outcome
/// (HighRisk = offended, VeryLowRisk = did not).
fn labeled_accuracy(test: &[CaseRecord], predict: impl Fn(&FeatureMap) -> RiskLabel) -> f64 {
    let (mut right, mut labeled) = (0usize, 0usize);
    for r in test {
        let y = r.outcomes.fta.unwrap_or_default();
        match predict(&r.model_features(false)) {
            RiskLabel::HighRisk => {
                labeled += 1;
                right += usize::from(y);
            }
            RiskLabel::VeryLowRisk => {
                labeled += 1;
                right += usize::from(!y);
            }
            RiskLabel::Handoff => {}
        }
    }
    if labeled == 0 {
        0.0
    } else {
        right as f64 / labeled as f64
    }
}

fn numeric_splits(node: &TreeNode, out: &mut Vec<(String, f64)>) {
    if let TreeNode::Split { feature, condition, left, right, .. } = node {
        if let Condition::AtMost { threshold } = condition {
            out.push((feature.clone(), *threshold));
        }
        numeric_splits(left, out);
        numeric_splits(right, out);
    }
}

// 8
fn forest_properties() -> Check {
    // Degenerate equivalence on a grid.
    let recs = cluster_population(8000, 4);
    let mut tc = cluster_tree_config();
    tc.min_cluster_size = 150;
    let tree = HandoffTree::fit(&recs, &tc).map_err(|e| e.to_string())?;
    let single = HandoffForest::fit(&recs, &ForestConfig::degenerate(tc)).map_err(|e| e.to_string())?;
    for age in 18..=70 {
        for prior in 0..=5 {
            let f = point(age as f64, prior as f64);
            let (a, b) = (tree.predict(&f).unwrap(), single.predict(&f).unwrap());
            ensure!(
                (a.label, a.error_rate, a.n, a.k) == (b.label, b.error_rate, b.n, b.k),
                "one-tree forest differs at age {age}, prior {prior}"
            );
        }
    }

    // Pooled counts equal member sums.
    let mixed = mixed_population(3000, 12);
    let mut config = ForestConfig::new(15, TreeConfig::new(Outcome::Fta, 40, 0.4, 0.15), 3);
    config.feature_subsample_fraction = 0.67;
    let forest = HandoffForest::fit(&mixed, &config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let mut f = point(rng.random_range(18..=70) as f64, rng.random_range(0..=5) as f64);
        f.insert("district".into(), FeatureValue::Categorical(DISTRICTS[rng.random_range(0..DISTRICTS.len())].into()));
        let p = forest.predict(&f).map_err(|e| e.to_string())?;
        let (n, k) = forest.trees.iter().map(|t| t.predict(&f).unwrap()).fold((0, 0), |(n, k), l| (n + l.n, k + l.k));
        ensure!((p.n, p.k) == (n, k), "pooled ({}, {}) vs member sums ({n}, {k})", p.n, p.k);
    }

    // Held-out accuracy, forest of 50 against one tree, over 10 seeds.
    let (mut tree_acc, mut forest_acc) = (0.0, 0.0);
    for seed in 0..10u64 {
        let train = cluster_population(5000, 1000 + seed);
        let test = cluster_population(10_000, 2000 + seed);
        let mut tc = cluster_tree_config();
        tc.min_cluster_size = 100;
        tc.min_impurity_decrease = 0.0;
        let tree = HandoffTree::fit(&train, &tc).map_err(|e| e.to_string())?;
        let forest = HandoffForest::fit(&train, &ForestConfig::new(50, tc, seed)).map_err(|e| e.to_string())?;
        tree_acc += labeled_accuracy(&test, |f| tree.predict(f).unwrap().label) / 10.0;
        forest_acc += labeled_accuracy(&test, |f| forest.predict(f).unwrap().label) / 10.0;
    }
    ensure!(forest_acc >= tree_acc, "mean accuracy forest {forest_acc:.4} < tree {tree_acc:.4}");

    // Boundary pairs straddling member splits.
    let recs = cluster_population(8000, 9);
    let mut tc = cluster_tree_config();
    tc.min_cluster_size = 150;
    tc.min_impurity_decrease = 0.0;
    let forest = HandoffForest::fit(&recs, &ForestConfig::new(25, tc, 4)).map_err(|e| e.to_string())?;
    let mut pairs = 0;
    for member in forest.trees.iter().take(5) {
        let mut splits = Vec::new();
        numeric_splits(&member.root, &mut splits);
        for (feature, t) in splits {
            for (age, prior) in [(25.0, 0.0), (45.0, 0.0), (45.0, 2.0), (65.0, 5.0)] {
                let make = |v: f64| {
                    let mut f = point(age, prior);
                    f.insert(feature.clone(), FeatureValue::Numeric(v));
                    f
                };
                let (a, b) = (make(t - 0.5), make(t + 0.5));
                let pooled = (forest.predict(&a).unwrap().pooled_rate() - forest.predict(&b).unwrap().pooled_rate()).abs();
                let max_single = forest
                    .trees
                    .iter()
                    .map(|m| {
                        let (pa, pb) = (m.predict(&a).unwrap(), m.predict(&b).unwrap());
                        (pa.k as f64 / pa.n as f64 - pb.k as f64 / pb.n as f64).abs()
                    })
                    .fold(0.0, f64::max);
                ensure!(pooled <= max_single + 1e-12, "{feature} at {t}: pooled jump {pooled:.4} > {max_single:.4}");
                pairs += 1;
            }
        }
    }
    ensure!(pairs > 0, "no boundary pairs constructed");
    Ok(format!("labeled accuracy forest {forest_acc:.4} vs tree {tree_acc:.4}; {pairs} boundary pairs"))
}

fn two_group_spec(rates: [f64; 2], seed: u64) -> TradeoffSpec {
    TradeoffSpec {
        groups: vec![
            BinormalGroup { name: "a".into(), base_rate: rates[0], auc: 0.7, n: 20_000 },
            BinormalGroup { name: "b".into(), base_rate: rates[1], auc: 0.7, n: 20_000 },
        ],
        threshold: 0.25,
        bins: 10,
        min_bin_count: 2000,
        seed,
    }
}

// 9
fn tradeoff_demonstration() -> Check {
    let r = tradeoff_demo(&two_group_spec([0.148, 0.30], 5)).map_err(|e| e.to_string())?;
    let cal = r.max_calibration_gap.ok_or("no calibration gap")?;
    let gap = r.fpr_gap.ok_or("no FPR gap")?;
    let expected = r.expected_fpr_gap.ok_or("no closed-form gap")?;
    let sigma = r.fpr_gap_sigma.ok_or("no sigma")?;
    ensure!(cal <= 0.03, "calibration gap {cal:.4} > 0.03");
    ensure!(gap >= 0.05, "FPR gap {gap:.4} < 0.05");
    ensure!(expected >= 0.05, "closed-form FPR gap {expected:.4} < 0.05");
    ensure!((gap - expected).abs() <= 4.0 * sigma, "FPR gap {gap:.4} vs closed form {expected:.4} (sigma {sigma:.4})");
    let control = tradeoff_demo(&two_group_spec([0.2, 0.2], 6)).map_err(|e| e.to_string())?;
    let (cgap, csigma) = (control.fpr_gap.unwrap_or(f64::NAN), control.fpr_gap_sigma.unwrap_or(f64::NAN));
    ensure!(cgap <= 2.0 * csigma, "equal base rates: FPR gap {cgap:.4} > 2 sigma ({csigma:.4})");
    Ok(format!(
        "calibration gap {cal:.4}, FPR gap {gap:.4} (closed form {expected:.4}); control gap {cgap:.4} <= 2 x {csigma:.4}"
    ))
}

// 10
fn per_group_auc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(655);
    let mut cases = Vec::new();
    for (name, target) in [("group_1", 0.655), ("group_2", 0.612)] {
        cases.extend(draw_binormal(&BinormalGroup { name: name.into(), base_rate: 0.148, auc: target, n: 20_000 }, &mut rng));
    }
    let got = group_auc(&cases);
    let mut detail = Vec::new();
    for (name, target) in [("group_1", 0.655), ("group_2", 0.612)] {
        let a = got.get(name).copied().flatten().ok_or(format!("{name}: undefined AUC"))?;
        ensure!((a - target).abs() <= 0.02, "{name}: AUC {a:.4} vs {target} +- 0.02");
        detail.push(format!("{target} -> {a:.4}"));
    }
    Ok(detail.join(", "))
}

fn fixture_tree() -> Result<HandoffTree, String> {
    let recs = cluster_population(20_000, 11);
    HandoffTree::fit(&recs, &cluster_tree_config()).map_err(|e| e.to_string())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) })
}

fn open(log: &Path, model: &HandoffTree) -> Result<AppState, String> {
    AppState::open(ServiceConfig {
        psa: PsaConfig::default(),
        model: Some(Model::Tree(model.clone())),
        log_path: log.to_path_buf(),
        token: None,
    })
    .map_err(|e| e.to_string())
}

async fn service_flows(dir: &Path) -> Check {
    let tree = fixture_tree()?;
    let log = dir.join("decisions.jsonl");
    let app = router(open(&log, &tree)?);

    let case = CaseInput::appendix_sample();
    let assess = json!({ "factors": case.factors, "offenses": case.offenses, "metadata": case.metadata });
    let (s, body) = call(&app, "POST", "/assess", Some(assess.clone())).await;
    ensure!(s == StatusCode::OK, "assess: {s} {body}");
    ensure!(body["assessment"]["nvca_flag"] == json!(false), "assess flag {}", body["assessment"]["nvca_flag"]);
    let mut bad = assess;
    bad["factors"]["prior_conviction"] = json!(false);
    ensure!(call(&app, "POST", "/assess", Some(bad)).await.0 == StatusCode::BAD_REQUEST, "invalid factors not 400");

    let predict = |age: f64, prior: f64| json!({ "case_ref": format!("{age}/{prior}"), "features": { "age": age, "prior_fta": prior } });
    let (s, high) = call(&app, "POST", "/predict", Some(predict(25.0, 5.0))).await;
    ensure!(s == StatusCode::OK && high["label"] == json!("HighRisk"), "HighRisk predict: {s} {high}");
    ensure!(high["error_rate"].as_f64().is_some(), "HighRisk response lacks its error rate");
    let (s, hand) = call(&app, "POST", "/predict", Some(predict(25.0, 2.0))).await;
    ensure!(s == StatusCode::OK && hand["label"] == json!("Handoff"), "Handoff predict: {s} {hand}");
    let fields = hand.as_object().ok_or("handoff body is not an object")?;
    for hidden in ["recommendation", "error_rate"] {
        ensure!(!fields.contains_key(hidden), "Handoff response carries {hidden}");
    }
    ensure!(hand["path"].as_array().is_some_and(|p| !p.is_empty()), "Handoff response lacks the path");
    let (s, _) = call(&app, "POST", "/predict", Some(json!({ "features": { "age": 30 } }))).await;
    ensure!(s == StatusCode::BAD_REQUEST, "missing feature gave {s}");

    let hid = hand["prediction_id"].as_str().ok_or("no prediction id")?.to_string();
    let xid = high["prediction_id"].as_str().ok_or("no prediction id")?.to_string();
    let (s, _) = call(&app, "POST", "/decisions", Some(json!({ "prediction_id": hid, "decision": "detain", "rationale": "" }))).await;
    ensure!(s == StatusCode::UNPROCESSABLE_ENTITY, "detain without rationale gave {s}");
    let (s, _) = call(&app, "POST", "/decisions", Some(json!({ "prediction_id": "00000000-0000-0000-0000-000000000000", "decision": "release" }))).await;
    ensure!(s == StatusCode::NOT_FOUND, "unknown prediction gave {s}");
    let first = json!({ "prediction_id": hid, "decision": "release_with_conditions", "rationale": "weekly check-in", "decider": "judge-4" });
    let (s, rec) = call(&app, "POST", "/decisions", Some(first.clone())).await;
    ensure!(s == StatusCode::CREATED, "decision: {s} {rec}");
    ensure!(rec["prediction"]["label"] == json!("Handoff"), "snapshot not embedded: {rec}");
    ensure!(call(&app, "POST", "/decisions", Some(first)).await.0 == StatusCode::CONFLICT, "second decision not 409");
    let (s, _) = call(&app, "POST", "/decisions", Some(json!({ "prediction_id": xid, "decision": "detain", "rationale": "prior warrants" }))).await;
    ensure!(s == StatusCode::CREATED, "second decision gave {s}");
    let (_, before) = call(&app, "GET", "/decisions?limit=500", None).await;
    ensure!(before["total"] == json!(2), "decision list: {before}");
    drop(app);

    // Restart after a torn final write.
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).map_err(|e| e.to_string())?;
    f.write_all(b"{\"schema\":\"decision-log/v1\",\"kind\":\"decis").map_err(|e| e.to_string())?;
    drop(f);
    let restarted = router(open(&log, &tree)?);
    let (_, after) = call(&restarted, "GET", "/decisions?limit=500", None).await;
    ensure!(after == before, "replayed list differs:\n{before}\n{after}");
    let (s, _) = call(&restarted, "POST", "/decisions", Some(json!({ "prediction_id": xid, "decision": "release" }))).await;
    ensure!(s == StatusCode::CONFLICT, "decided prediction accepted again after restart: {s}");

    // The same state behind a real socket.
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, open(&log, &tree)?, async {
        let _ = rx.await;
    }));
    let reply = tokio::task::spawn_blocking(move || -> std::io::Result<String> {
        let mut s = std::net::TcpStream::connect(addr)?;
        s.write_all(b"GET /decisions HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")?;
        let mut text = String::new();
        s.read_to_string(&mut text)?;
        Ok(text)
    })
    .await
    .map_err(|e| e.to_string())?
    .map_err(|e| e.to_string())?;
    let _ = tx.send(());
    server.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    ensure!(reply.starts_with("HTTP/1.1 200"), "socket reply: {reply}");
    ensure!(reply.contains("\"total\":2"), "socket reply lacks the two decisions: {reply}");
    Ok("assess/predict/decisions codes, no recommendation on Handoff, exact replay after torn write".into())
}

// 11
fn service_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(service_flows(dir.path()))
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "court report sample case", budget: Duration::from_secs(1), check: appendix_fidelity },
        Criterion { id: 2, name: "age threshold discontinuity", budget: Duration::from_secs(1), check: age_discontinuity },
        Criterion { id: 3, name: "release-all baseline", budget: Duration::from_secs(5), check: release_all_baseline },
        Criterion { id: 4, name: "offense rates by score", budget: Duration::from_secs(30), check: table_three_machinery },
        Criterion { id: 5, name: "AUC oracle", budget: Duration::from_secs(10), check: auc_oracle },
        Criterion { id: 6, name: "handoff tree soundness", budget: Duration::from_secs(60), check: tree_soundness },
        Criterion { id: 7, name: "planted regions recovered", budget: Duration::from_secs(30), check: narrative_recovery },
        Criterion { id: 8, name: "forest properties", budget: Duration::from_secs(120), check: forest_properties },
        Criterion { id: 9, name: "calibration vs error-rate tradeoff", budget: Duration::from_secs(30), check: tradeoff_demonstration },
        Criterion { id: 10, name: "per-group AUC recovery", budget: Duration::from_secs(15), check: per_group_auc },
        Criterion { id: 11, name: "service contract", budget: Duration::from_secs(30), check: service_contract },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if took <= c.budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {:.2}s, budget {}s", took.as_secs_f64(), c.budget.as_secs()))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {}: {detail} [{:.2}s]", c.id, c.name, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {}: {why} [{:.2}s]", c.id, c.name, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
