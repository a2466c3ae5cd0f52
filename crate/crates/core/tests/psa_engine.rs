use pretrial_core::psa::{
    assess, compute_raw_scores, lookup_recommendation, nvca_flag, scale_scores, CaseInput, ExclusionConfig,
    render_court_report, FactorVector, Offense, PsaConfig, PsaError, RecommendationCell, RiskAssessment,
    SmoothingMode, MAX_AGE, MIN_AGE,
};
use proptest::prelude::*;

fn arb_factors() -> impl Strategy<Value = FactorVector> {
    (
        MIN_AGE..=80u32,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        0..5u32,
        0..4u32,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(age, cvo, pending, misd, fel, viol, fta2, old, inc)| {
            FactorVector::from_answers(age, cvo, pending, misd, fel, viol, fta2, old, inc)
        })
}

#[test]
fn appendix_sample_flag_and_exclusion() {
    let case = CaseInput::appendix_sample();
    let config = PsaConfig::default().with_exclusions(ExclusionConfig::san_francisco());
    let a = assess(&case.factors, &case.offenses, &config).unwrap();
    assert!(!a.nvca_flag);
    assert!(a.step2_applied);
    assert_eq!(a.recommendation, RecommendationCell::ReleaseNotRecommended);
}

#[test]
fn appendix_sample_without_exclusions() {
    let case = CaseInput::appendix_sample();
    let a = assess(&case.factors, &case.offenses, &PsaConfig::default()).unwrap();
    assert!(!a.nvca_flag);
    assert!(!a.step2_applied);
    assert_eq!((a.raw_fta, a.raw_nca, a.raw_nvca), (2.0, 5.0, 2.0));
    assert_eq!((a.scaled_fta, a.scaled_nca), (3, 4));
}

#[test]
fn minimal_factors_give_release_on_own_recognizance() {
    let a = assess(&FactorVector::minimal(45), &[], &PsaConfig::default()).unwrap();
    assert_eq!((a.scaled_fta, a.scaled_nca), (1, 1));
    assert_eq!(a.recommendation, RecommendationCell::OrNas);
}

#[test]
fn config_round_trips_through_toml() {
    let c = PsaConfig::default();
    assert_eq!(PsaConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
}

#[test]
fn config_schema_checked() {
    let text = include_str!("../data/psa_default.toml").replace("psa-config/v1", "psa-config/v0");
    assert!(matches!(PsaConfig::from_toml_str(&text), Err(PsaError::Schema { .. })));
}

fn compose(f: &FactorVector, offenses: &[Offense], c: &PsaConfig) -> Result<RiskAssessment, PsaError> {
    let raw = compute_raw_scores(f, &c.weights, c.smoothing)?;
    let (sf, sn) = scale_scores(raw.fta, raw.nca, &c.weights)?;
    let flag = nvca_flag(raw.nvca, &c.weights)?;
    let rec = lookup_recommendation(sf, sn, flag, &c.matrix, &c.exclusions, f, offenses)?;
    Ok(RiskAssessment {
        raw_fta: raw.fta,
        raw_nca: raw.nca,
        raw_nvca: raw.nvca,
        scaled_fta: sf,
        scaled_nca: sn,
        nvca_flag: flag,
        recommendation: rec.cell,
        step2_applied: rec.step2_applied,
        exclusion: rec.exclusion,
    })
}

proptest! {
    #[test]
    fn assess_matches_manual_composition(f in arb_factors(), murder in any::<bool>(), smooth in any::<bool>()) {
        let mut c = PsaConfig::default().with_exclusions(ExclusionConfig::san_francisco());
        if smooth {
            c = c.with_smoothing(SmoothingMode::DEFAULT_RAMP);
        }
        let offenses = if murder { vec![Offense::new("187 PC", "")] } else { vec![] };
        let got = assess(&f, &offenses, &c);
        let want = compose(&f, &offenses, &c);
        match (got, want) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "diverged: {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn raising_one_factor_never_lowers_raw_scores(f in arb_factors(), which in 0..9usize) {
        let w = PsaConfig::default().weights;
        let mut g = f.clone();
        match which {
            0 => g.age_at_arrest = g.age_at_arrest.saturating_sub(1).max(MIN_AGE),
            1 => g.current_violent_offense = true,
            2 => g.pending_charge = true,
            3 => g.prior_misdemeanor_conviction = true,
            4 => g.prior_felony_conviction = true,
            5 => g.prior_violent_convictions += 1,
            6 => g.prior_fta_past_2y += 1,
            7 => g.prior_fta_older_2y = true,
            _ => g.prior_sentence_incarceration = true,
        }
        let g = FactorVector::from_answers(
            g.age_at_arrest, g.current_violent_offense, g.pending_charge,
            g.prior_misdemeanor_conviction, g.prior_felony_conviction,
            g.prior_violent_convictions, g.prior_fta_past_2y, g.prior_fta_older_2y,
            g.prior_sentence_incarceration,
        );
        for smoothing in [SmoothingMode::Off, SmoothingMode::DEFAULT_RAMP] {
            let a = compute_raw_scores(&f, &w, smoothing).unwrap();
            let b = compute_raw_scores(&g, &w, smoothing).unwrap();
            prop_assert!(b.fta >= a.fta && b.nca >= a.nca && b.nvca >= a.nvca);
        }
    }

    #[test]
    fn exclusions_off_makes_offenses_irrelevant(f in arb_factors(), code in "[0-9]{3,5}") {
        let c = PsaConfig::default();
        let a = assess(&f, &[], &c);
        let b = assess(&f, &[Offense::new(code, "x")], &c);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn smoothed_adjacent_ages_differ_by_at_most_one(f in arb_factors(), age in MIN_AGE..100u32) {
        let w = PsaConfig::default().weights;
        let at = |a: u32| {
            let mut g = f.clone();
            g.age_at_arrest = a;
            g.violent_and_20_or_younger = g.current_violent_offense && a <= 20;
            compute_raw_scores(&g, &w, SmoothingMode::DEFAULT_RAMP).unwrap().nca
        };
        prop_assert!((at(age) - at(age + 1)).abs() <= 1.0);
    }

    #[test]
    fn scaling_is_monotone(a in 0u32..=13, b in 0u32..=13) {
        let w = PsaConfig::default().weights;
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(w.nca.scaled(lo as f64).unwrap() <= w.nca.scaled(hi as f64).unwrap());
        let (lo, hi) = (lo.min(7), hi.min(7));
        prop_assert!(w.fta.scaled(lo as f64).unwrap() <= w.fta.scaled(hi as f64).unwrap());
    }
}

proptest! {
    #[test]
    fn turning_23_removes_two_nca_points(f in arb_factors()) {
        let w = PsaConfig::default().weights;
        let at = |age: u32| {
            let mut g = f.clone();
            g.age_at_arrest = age;
            g.violent_and_20_or_younger = false;
            compute_raw_scores(&g, &w, SmoothingMode::Off).unwrap()
        };
        let (young, old) = (at(22), at(23));
        prop_assert_eq!(young.nca - old.nca, 2.0);
        prop_assert_eq!(young.fta, old.fta);
    }
}

#[test]
fn extreme_raw_scores() {
    let w = PsaConfig::default().weights;
    assert_eq!(scale_scores(0.0, 0.0, &w).unwrap(), (1, 1));
    assert_eq!(scale_scores(w.fta.raw_max as f64, w.nca.raw_max as f64, &w).unwrap(), (6, 6));
    assert!(!nvca_flag(0.0, &w).unwrap());
    assert!(nvca_flag(w.nvca.raw_max as f64, &w).unwrap());
    assert!(scale_scores(w.fta.raw_max as f64 + 1.0, 0.0, &w).is_err());
}

#[test]
fn all_minimum_factors_score_zero() {
    let raw = compute_raw_scores(&FactorVector::minimal(MAX_AGE), &PsaConfig::default().weights, SmoothingMode::Off).unwrap();
    assert_eq!((raw.fta, raw.nca, raw.nvca), (0.0, 0.0, 0.0));
}

#[test]
fn exclusion_override_and_master_switch() {
    let f = FactorVector::minimal(40);
    let murder = [Offense::new("187 PC", "MURDER")];
    let on = PsaConfig::default().with_exclusions(ExclusionConfig::san_francisco());
    let a = assess(&f, &murder, &on).unwrap();
    assert_eq!(a.recommendation, RecommendationCell::ReleaseNotRecommended);
    assert!(a.step2_applied);
    let mut off = on.clone();
    off.exclusions.enabled = false;
    let b = assess(&f, &murder, &off).unwrap();
    assert_eq!(b.recommendation, RecommendationCell::OrNas);
    assert!(!b.step2_applied);
}

#[test]
fn inconsistent_factors_name_the_invariant() {
    let mut f = FactorVector::minimal(40);
    f.prior_conviction = true;
    match assess(&f, &[], &PsaConfig::default()) {
        Err(PsaError::InvalidFactors { invariant, .. }) => assert_eq!(invariant, "prior_conviction"),
        other => panic!("expected invalid factors, got {other:?}"),
    }
}

#[test]
fn appendix_report_lines_and_golden_file() {
    let case = CaseInput::appendix_sample();
    let config = PsaConfig::default().with_exclusions(ExclusionConfig::san_francisco());
    let render = || {
        let a = assess(&case.factors, &case.offenses, &config).unwrap();
        render_court_report(&a, &case.factors, &case.metadata, &case.offenses, &config.matrix)
    };
    let text = render();
    assert_eq!(text, render());
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    assert!(lines.contains(&"New Violent Criminal Activity Flag No"));
    assert!(lines.contains(&"Is this Response based on a Step 2 exclusion? Yes"));
    assert_eq!(text, include_str!("golden/appendix1_report.txt"));
}
